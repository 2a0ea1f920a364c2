//! Neighbour lookup structures shared by clustering, normal estimation and
//! the registration stages.

use std::collections::HashMap;
use std::num::NonZero;

use kiddo::{ImmutableKdTree, SquaredEuclidean};

use crate::pose::Point3;

type VoxelKey = (i64, i64, i64);

#[inline]
fn voxel_key(p: &Point3, inv_size: f64) -> VoxelKey {
    (
        (p.x * inv_size).floor() as i64,
        (p.y * inv_size).floor() as i64,
        (p.z * inv_size).floor() as i64,
    )
}

/// Hash grid bucketing point indices by cubic voxel.
pub struct VoxelGrid {
    inv_size: f64,
    cells: HashMap<VoxelKey, Vec<usize>>,
}

impl VoxelGrid {
    pub fn new(points: &[Point3], voxel_size: f64) -> Self {
        assert!(voxel_size > 0.0);
        let inv_size = 1.0 / voxel_size;
        let mut cells: HashMap<VoxelKey, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(voxel_key(p, inv_size)).or_default().push(i);
        }
        Self { inv_size, cells }
    }

    /// Calls `f` with every stored index in the 3×3×3 block of voxels around `p`.
    pub fn for_each_near(&self, p: &Point3, mut f: impl FnMut(usize)) {
        let (x, y, z) = voxel_key(p, self.inv_size);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(cell) = self.cells.get(&(x + dx, y + dy, z + dz)) {
                        cell.iter().copied().for_each(&mut f);
                    }
                }
            }
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.cells.values()
    }
}

/// Replaces the points of each occupied voxel by their centroid. Output is
/// ordered by voxel key, so it does not depend on input order.
pub fn voxel_downsample(points: &[Point3], voxel_size: f64) -> Vec<Point3> {
    if points.is_empty() {
        return Vec::new();
    }
    let inv_size = 1.0 / voxel_size;
    let mut cells: HashMap<VoxelKey, (Point3, usize)> = HashMap::new();
    for p in points {
        let e = cells
            .entry(voxel_key(p, inv_size))
            .or_insert((Point3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    let mut cells: Vec<_> = cells.into_iter().collect();
    cells.sort_unstable_by_key(|(k, _)| *k);
    cells
        .into_iter()
        .map(|(_, (sum, n))| sum / n as f64)
        .collect()
}

/// Static k-d tree over a point slice; indices refer to that slice.
pub struct PointIndex {
    tree: Option<ImmutableKdTree<f64, 3>>,
    len: usize,
}

impl PointIndex {
    pub fn new(points: &[Point3]) -> Self {
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = (!coords.is_empty()).then(|| ImmutableKdTree::new_from_slice(&coords));
        Self {
            tree,
            len: points.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Nearest stored point as `(index, distance)`.
    pub fn nearest(&self, p: &Point3) -> Option<(usize, f64)> {
        let tree = self.tree.as_ref()?;
        let nn = tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]);
        Some((nn.item as usize, nn.distance.sqrt()))
    }

    /// Up to `k` nearest stored points, closest first.
    pub fn nearest_k(&self, p: &Point3, k: usize) -> Vec<(usize, f64)> {
        let (Some(tree), Some(k)) = (self.tree.as_ref(), NonZero::new(k)) else {
            return Vec::new();
        };
        tree.nearest_n::<SquaredEuclidean>(&[p.x, p.y, p.z], k)
            .into_iter()
            .map(|nn| (nn.item as usize, nn.distance.sqrt()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kd_nearest_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3> = (0..500)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    0.0,
                )
            })
            .collect();
        let index = PointIndex::new(&pts);
        for _ in 0..100 {
            let q = Vector3::new(
                rng.random_range(-6.0..6.0),
                rng.random_range(-6.0..6.0),
                0.3,
            );
            let (_, d) = index.nearest(&q).unwrap();
            let best = pts.iter().map(|p| (p - q).norm()).fold(f64::MAX, f64::min);
            assert!((d - best).abs() < 1e-12);
            let knn = index.nearest_k(&q, 5);
            assert_eq!(knn.len(), 5);
            assert!(knn.windows(2).all(|w| w[0].1 <= w[1].1));
        }
    }

    #[test]
    fn empty_index() {
        let index = PointIndex::new(&[]);
        assert!(index.nearest(&Vector3::zeros()).is_none());
        assert!(index.nearest_k(&Vector3::zeros(), 3).is_empty());
    }

    #[test]
    fn downsample_merges_voxel() {
        let pts = vec![
            Vector3::new(0.01, 0.01, 0.01),
            Vector3::new(0.03, 0.01, 0.01),
            Vector3::new(1.0, 1.0, 1.0),
        ];
        let out = voxel_downsample(&pts, 0.2);
        assert_eq!(out.len(), 2);
        assert!((out[0] - Vector3::new(0.02, 0.01, 0.01)).norm() < 1e-12);
    }
}
