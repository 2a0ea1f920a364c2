//! Foreground instance extraction: single-linkage Euclidean clustering per
//! class and axis-aligned box fitting.

use crate::pose::Point3;
use crate::scan_io::{ClassId, ClassMap, SemanticScan};
use crate::spatial::VoxelGrid;

pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 10;

/// Axis-aligned extents in the sensor frame: `length` along x, `height`
/// along z, `width` along y.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BoxSize {
    pub length: f64,
    pub height: f64,
    pub width: f64,
}

impl BoxSize {
    pub fn as_array(&self) -> [f64; 3] {
        [self.length, self.height, self.width]
    }

    /// Largest per-axis difference relative to the larger of the two
    /// extents; axes where both extents are zero count as equal.
    pub fn max_relative_difference(&self, other: &BoxSize) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(&a, b)| {
                let scale = a.max(b);
                if scale <= 0.0 {
                    0.0
                } else {
                    (a - b).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub label: ClassId,
    /// Indices into the source scan's point array, ascending.
    pub indices: Vec<usize>,
    pub center: Point3,
    pub size: BoxSize,
}

impl Instance {
    pub fn point_count(&self) -> usize {
        self.indices.len()
    }

    pub fn points<'a>(&'a self, scan: &'a SemanticScan) -> impl Iterator<Item = Point3> + 'a {
        self.indices.iter().map(|&i| scan.points[i])
    }
}

/// Centroid and per-axis extents of a nonempty point set.
pub fn fit_box<'a>(points: impl IntoIterator<Item = &'a Point3>) -> (Point3, BoxSize) {
    let mut lo = Point3::repeat(f64::INFINITY);
    let mut hi = Point3::repeat(f64::NEG_INFINITY);
    let mut sum = Point3::zeros();
    let mut n = 0usize;
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
        sum += p;
        n += 1;
    }
    assert!(n > 0, "fit_box needs at least one point");
    let ext = hi - lo;
    (
        sum / n as f64,
        BoxSize {
            length: ext.x,
            height: ext.z,
            width: ext.y,
        },
    )
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of the "distance ≤ radius" graph over the points
/// labeled `class`, keeping components with at least `min_cluster_size`
/// members. Instances are ordered by their smallest point index.
pub fn cluster_class(
    scan: &SemanticScan,
    class: ClassId,
    radius: f64,
    min_cluster_size: usize,
) -> Vec<Instance> {
    assert!(radius > 0.0, "clustering radius must be positive");
    let members: Vec<usize> = scan
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == class)
        .map(|(i, _)| i)
        .collect();
    if members.is_empty() {
        return Vec::new();
    }
    let pts: Vec<Point3> = members.iter().map(|&i| scan.points[i]).collect();
    let grid = VoxelGrid::new(&pts, radius);
    let r2 = radius * radius;
    let mut sets = DisjointSet::new(pts.len());
    for (a, p) in pts.iter().enumerate() {
        grid.for_each_near(p, |b| {
            if b > a && (pts[b] - p).norm_squared() <= r2 {
                sets.union(a, b);
            }
        });
    }

    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    let mut root_first: std::collections::HashMap<usize, usize> = Default::default();
    for (local, &member) in members.iter().enumerate() {
        let root = sets.find(local);
        let first = *root_first.entry(root).or_insert(local);
        groups.entry(first).or_default().push(member);
    }

    groups
        .into_values()
        .filter(|g| g.len() >= min_cluster_size.max(1))
        .map(|indices| {
            let (center, size) = fit_box(indices.iter().map(|&i| &scan.points[i]));
            Instance {
                label: class,
                indices,
                center,
                size,
            }
        })
        .collect()
}

/// Clusters every foreground class of `classes` with its configured radius.
/// Output is grouped by class in class-map order.
pub fn extract_instances(
    scan: &SemanticScan,
    classes: &ClassMap,
    min_cluster_size: usize,
) -> Vec<Instance> {
    use rayon::prelude::*;
    let fg = classes.foreground();
    let per_class: Vec<Vec<Instance>> = fg
        .par_iter()
        .map(|&c| {
            let r = classes.cluster_distance(c).unwrap_or(0.5);
            cluster_class(scan, c, r, min_cluster_size)
        })
        .collect();
    per_class.into_iter().flatten().collect()
}
