//! Dense point-to-point ICP restricted to matched instance pairs.

use crate::pose::{fit_rigid, Point3, Pose};
use crate::spatial::PointIndex;

use super::{RefinementConfig, StageReport};

/// Points of one matched instance pair: `query` in the query frame,
/// `target` in the candidate frame.
#[derive(Clone, Debug)]
pub struct InstancePair {
    pub query: Vec<Point3>,
    pub target: Vec<Point3>,
}

/// Nearest-neighbour pairs `(target point, query point)` under `pose`,
/// searched only inside each matched instance pair and capped at `cap`.
pub fn instance_correspondences(
    pairs: &[InstancePair],
    trees: &[PointIndex],
    pose: &Pose,
    cap: f64,
) -> Vec<(Point3, Point3)> {
    let mut out = Vec::new();
    for (pair, tree) in pairs.iter().zip(trees) {
        for p in &pair.target {
            let x = pose.transform_point(p);
            if let Some((j, d)) = tree.nearest(&x) {
                if d <= cap {
                    out.push((*p, pair.query[j]));
                }
            }
        }
    }
    out
}

/// `Σ ‖T·p_t − p_q‖²` over fixed correspondences.
pub fn point_to_point_objective(pose: &Pose, corr: &[(Point3, Point3)]) -> f64 {
    corr.iter()
        .map(|(t, q)| (pose.transform_point(t) - q).norm_squared())
        .sum()
}

fn mean_residual(pose: &Pose, corr: &[(Point3, Point3)]) -> f64 {
    if corr.is_empty() {
        return f64::NAN;
    }
    corr.iter()
        .map(|(t, q)| (pose.transform_point(t) - q).norm())
        .sum::<f64>()
        / corr.len() as f64
}

/// Alternates capped nearest-neighbour association with the closed-form
/// rigid update until the pose change drops below tolerance.
///
/// Returns `init` with `degraded` set if fewer than three correspondences
/// survive in any iteration.
pub fn icp_instances(
    pairs: &[InstancePair],
    init: &Pose,
    config: &RefinementConfig,
) -> (Pose, StageReport) {
    let trees: Vec<PointIndex> = pairs.iter().map(|p| PointIndex::new(&p.query)).collect();
    let mut report = StageReport::default();
    let mut pose = *init;
    for _ in 0..config.icp_max_iterations {
        let corr = instance_correspondences(pairs, &trees, &pose, config.icp_max_correspondence);
        if corr.len() < 3 {
            report.degraded = true;
            report.note = Some(format!("{} instance correspondences", corr.len()));
            return (*init, report);
        }
        let (src, dst): (Vec<Point3>, Vec<Point3>) = corr.iter().copied().unzip();
        let next = fit_rigid(&src, &dst).expect("nonempty correspondences");
        report.objective_trace.push((
            point_to_point_objective(&pose, &corr),
            point_to_point_objective(&next, &corr),
        ));
        report.iterations += 1;
        report.residual = mean_residual(&next, &corr);
        report.correspondences = corr.len();
        let (dr, dt) = pose.difference(&next);
        pose = next;
        if dt < config.icp_translation_tolerance && dr < config.icp_rotation_tolerance {
            report.converged = true;
            break;
        }
    }
    (pose, report)
}
