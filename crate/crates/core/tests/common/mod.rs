//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls the code under test.
#![allow(dead_code)]

use loopgraph::clustering::BoxSize;
use loopgraph::graph::{GraphNode, SemanticGraph};
use loopgraph::metrics::{LabeledDecision, PoseError};
use loopgraph::pose::Point3;
use loopgraph::scan_io::{ClassId, ClassMap};
use loopgraph::Pose;
use nalgebra::{DMatrix, Vector3};
use rand::Rng;

pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Uniform-axis rotation by an angle in (-π, π], translation in a 20 m box.
pub fn random_pose(rng: &mut impl Rng) -> Pose {
    let axis = random_unit(rng);
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    Pose::from_rotation_vector(
        axis * angle,
        Vector3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        ),
    )
}

pub fn random_points(rng: &mut impl Rng, n: usize, half: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            Vector3::new(
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                rng.random_range(-half..half),
            )
        })
        .collect()
}

/// Graph over random foreground nodes (no descriptors).
pub fn random_graph(
    rng: &mut impl Rng,
    n: usize,
    half: f64,
    classes: &ClassMap,
    d_max: f64,
) -> SemanticGraph {
    let fg = classes.foreground();
    let nodes = random_points(rng, n, half)
        .into_iter()
        .map(|center| GraphNode {
            center,
            size: BoxSize {
                length: 1.0,
                height: 1.0,
                width: 1.0,
            },
            label: fg[rng.random_range(0..fg.len())],
            descriptor: Vec::new(),
        })
        .collect();
    SemanticGraph::from_nodes(nodes, classes, d_max)
}

/// Minimum of `Σ_i cost[i][p(i)]` over all permutations, summed in row order.
pub fn brute_force_assignment(cost: &DMatrix<f64>) -> f64 {
    fn go(cost: &DMatrix<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.nrows() {
            *best = best.min(acc);
            return;
        }
        for c in 0..cost.ncols() {
            if !used[c] {
                used[c] = true;
                go(cost, row + 1, used, acc + cost[(row, c)], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.ncols()], 0.0, &mut best);
    best
}

/// Row-ordered sum of the assigned cells.
pub fn row_ordered_cost(cost: &DMatrix<f64>, pairs: &[(usize, usize)]) -> f64 {
    let mut p = pairs.to_vec();
    p.sort();
    p.iter().fold(0.0, |acc, &(i, j)| acc + cost[(i, j)])
}

/// Connected components of the `distance ≤ radius` graph by depth-first
/// search over all pairs. Components are returned as sorted index lists,
/// ordered by their smallest index.
pub fn brute_force_components(points: &[Point3], radius: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(a) = stack.pop() {
            for b in 0..n {
                if !seen[b] && (points[a] - points[b]).norm() <= radius {
                    seen[b] = true;
                    comp.push(b);
                    stack.push(b);
                }
            }
        }
        comp.sort();
        out.push(comp);
    }
    out
}

/// `(scan_id, distance)` of all eligible entries sorted by distance then id.
pub fn linear_scan(
    entries: &[(usize, Vec<f64>)],
    query: &[f64],
    current: usize,
    top_n: usize,
    window: usize,
) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = entries
        .iter()
        .filter(|(id, _)| id + window <= current)
        .map(|(id, d)| {
            let s: f64 = d.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (*id, s.sqrt())
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(top_n);
    all
}

/// Exhaustive-threshold metrics: for every distinct score used as a
/// threshold, precision and recall by direct counting.
pub struct OracleMetrics {
    pub points: Vec<(f64, f64, f64)>,
    pub f1_max: f64,
    pub ep: f64,
}

pub fn oracle_metrics(decisions: &[LabeledDecision]) -> OracleMetrics {
    let labeled: Vec<(f64, bool)> = decisions
        .iter()
        .filter_map(|d| d.is_true_loop.map(|t| (d.score, t)))
        .collect();
    let positives = labeled.iter().filter(|(_, t)| *t).count() as f64;
    let mut thresholds: Vec<f64> = labeled.iter().map(|(s, _)| *s).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut points = Vec::new();
    for &th in &thresholds {
        let tp = labeled.iter().filter(|(s, t)| *s >= th && *t).count() as f64;
        let fp = labeled.iter().filter(|(s, t)| *s >= th && !*t).count() as f64;
        points.push((th, tp / (tp + fp), tp / positives));
    }
    let f1_max = points
        .iter()
        .map(|&(_, p, r)| {
            if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let p_r0 = points[0].1;
    let r_p100 = points
        .iter()
        .filter(|&&(_, p, _)| p == 1.0)
        .map(|&(_, _, r)| r)
        .fold(0.0, f64::max);
    OracleMetrics {
        points,
        f1_max,
        ep: 0.5 * (p_r0 + r_p100),
    }
}

pub fn oracle_recall(errors: &[PoseError]) -> f64 {
    let mut ok = 0;
    for e in errors {
        if e.translation < 2.0 && e.yaw_deg < 5.0 {
            ok += 1;
        }
    }
    100.0 * ok as f64 / errors.len() as f64
}

/// Random decision records; scores come from a small set so ties occur.
pub fn random_decisions(rng: &mut impl Rng, n: usize) -> Vec<LabeledDecision> {
    (0..n)
        .map(|i| {
            let truth = match rng.random_range(0..10) {
                0 => None,
                1..=4 => Some(true),
                _ => Some(false),
            };
            let base = if truth == Some(true) { 0.3 } else { 0.0 };
            let score = ((base + rng.random::<f64>()) * 50.0).round() / 50.0;
            LabeledDecision {
                query_id: i,
                candidate_id: 0,
                score,
                is_true_loop: truth,
                estimated: None,
                ground_truth: None,
            }
        })
        .collect()
}

pub fn assert_rotation_valid(p: &Pose) {
    let r = p.rotation;
    let e = (r.transpose() * r - nalgebra::Matrix3::identity())
        .abs()
        .max();
    assert!(e < 1e-9, "orthonormality error {e}");
    assert!(
        (r.determinant() - 1.0).abs() < 1e-9,
        "det {}",
        r.determinant()
    );
}

pub fn class_points(points: &[Point3], labels: &[ClassId], class: ClassId) -> Vec<Point3> {
    points
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == class)
        .map(|(p, _)| *p)
        .collect()
}

/// A compact synthetic scene observed from the origin; a few thousand points.
pub fn small_scan(seed: u64) -> loopgraph::scan_io::SemanticScan {
    use loopgraph::synthetic::{generate_scene, observe, sensor_pose, SceneSpec};
    let spec = SceneSpec {
        poles: 8,
        trunks: 5,
        lamps: 3,
        vehicles: 2,
        buildings: 2,
        fences: 2,
        hedges: 1,
        road_strips: 1,
        half_extent: [30.0, 30.0],
        object_density: 30.0,
        wall_density: 1.5,
        ground_density: 1.0,
        seed,
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec);
    observe(&scene, &sensor_pose(0.0, 0.0, 0.0), 40.0, 0.01, seed, 0)
}
