//! Gauss-Newton point-to-plane refinement on background points.

use nalgebra::{Matrix6, Rotation3, Vector3, Vector6, SVD};

use crate::pose::{Point3, Pose};
use crate::spatial::PointIndex;

use super::normals::NormalEstimate;
use super::{RefinementConfig, StageReport};

/// Background points with their normals, in their own sensor frame.
#[derive(Clone, Debug, Default)]
pub struct PlaneCloud {
    pub points: Vec<Point3>,
    pub normals: Vec<NormalEstimate>,
}

impl PlaneCloud {
    pub fn usable(&self) -> impl Iterator<Item = (&Point3, &NormalEstimate)> {
        self.points
            .iter()
            .zip(&self.normals)
            .filter(|(_, n)| n.usable)
    }
}

/// A target point, its query correspondent and the query-side unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneCorrespondence {
    pub target: Point3,
    pub query: Point3,
    pub normal: Vector3<f64>,
}

/// `Σ (nᵀ(T·p_t − p_q))²`.
pub fn point_to_plane_objective(pose: &Pose, corr: &[PlaneCorrespondence]) -> f64 {
    corr.iter()
        .map(|c| {
            c.normal
                .dot(&(pose.transform_point(&c.target) - c.query))
                .powi(2)
        })
        .sum()
}

/// Gradient of [`point_to_plane_objective`] with respect to a left
/// increment `(ω, v)`, `T ← (exp(ω)·R, exp(ω)·t + v)`, at zero.
pub fn point_to_plane_gradient(pose: &Pose, corr: &[PlaneCorrespondence]) -> Vector6<f64> {
    let (_, g) = normal_equations(pose, corr);
    2.0 * g
}

/// Applies a left increment `(ω, v)` to `pose`.
pub fn apply_increment(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let omega = Vector3::new(delta[0], delta[1], delta[2]);
    let v = Vector3::new(delta[3], delta[4], delta[5]);
    let r = *Rotation3::new(omega).matrix();
    Pose::new(r * pose.rotation, r * pose.translation + v)
}

/// `(JᵀJ, Jᵀr)` of the linearized residuals, rows `[x × n, n]`.
fn normal_equations(pose: &Pose, corr: &[PlaneCorrespondence]) -> (Matrix6<f64>, Vector6<f64>) {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for c in corr {
        let x = pose.transform_point(&c.target);
        let r = c.normal.dot(&(x - c.query));
        let xn = x.cross(&c.normal);
        let j = Vector6::new(xn.x, xn.y, xn.z, c.normal.x, c.normal.y, c.normal.z);
        h += j * j.transpose();
        g += j * r;
    }
    (h, g)
}

/// Nearest usable query point within the cap whose normal agrees with the
/// rotated target normal.
pub fn plane_correspondences(
    query: &PlaneCloud,
    query_usable: &[usize],
    tree: &PointIndex,
    target: &PlaneCloud,
    pose: &Pose,
    config: &RefinementConfig,
) -> Vec<PlaneCorrespondence> {
    let min_cos = config.normal_agreement_deg.to_radians().cos();
    target
        .usable()
        .filter_map(|(p, n)| {
            let x = pose.transform_point(p);
            let (k, d) = tree.nearest(&x)?;
            if d > config.plane_max_correspondence {
                return None;
            }
            let qi = query_usable[k];
            let qn = query.normals[qi].normal;
            if qn.dot(&(pose.rotation * n.normal)).abs() < min_cos {
                return None;
            }
            Some(PlaneCorrespondence {
                target: *p,
                query: query.points[qi],
                normal: qn,
            })
        })
        .collect()
}

/// Minimizes the point-to-plane objective from `init`.
///
/// Directions whose normal-equation singular value falls below
/// `rank_tolerance × largest` are left untouched and `rank_deficient` is
/// set; the observable components are still solved.
pub fn point_to_plane_refine(
    query: &PlaneCloud,
    target: &PlaneCloud,
    init: &Pose,
    config: &RefinementConfig,
) -> (Pose, StageReport) {
    let query_usable: Vec<usize> = (0..query.points.len())
        .filter(|&i| query.normals[i].usable)
        .collect();
    let usable_pts: Vec<Point3> = query_usable.iter().map(|&i| query.points[i]).collect();
    let tree = PointIndex::new(&usable_pts);

    let mut report = StageReport::default();
    let mut pose = *init;
    for _ in 0..config.plane_max_iterations {
        let corr = plane_correspondences(query, &query_usable, &tree, target, &pose, config);
        if corr.len() < 6 {
            report.degraded = true;
            report.note = Some(format!("{} plane correspondences", corr.len()));
            return (*init, report);
        }
        let (h, g) = normal_equations(&pose, &corr);
        let svd = SVD::new(h, true, true);
        let smax = svd.singular_values.max();
        let cutoff = config.rank_tolerance * smax;
        if svd.singular_values.iter().any(|&s| s < cutoff) {
            report.rank_deficient = true;
        }
        let delta = -svd
            .pseudo_inverse(cutoff.max(f64::MIN_POSITIVE))
            .expect("U and Vᵀ computed")
            * g;
        let next = apply_increment(&pose, &delta).orthonormalized();
        report.objective_trace.push((
            point_to_plane_objective(&pose, &corr),
            point_to_plane_objective(&next, &corr),
        ));
        report.iterations += 1;
        report.correspondences = corr.len();
        report.residual = corr
            .iter()
            .map(|c| {
                c.normal
                    .dot(&(next.transform_point(&c.target) - c.query))
                    .abs()
            })
            .sum::<f64>()
            / corr.len() as f64;
        pose = next;
        if delta.norm() < config.plane_tolerance {
            report.converged = true;
            break;
        }
    }
    (pose, report)
}
