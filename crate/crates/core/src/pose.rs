//! Rigid transforms in SE(3) and the closed-form least-squares alignment of
//! corresponded point sets.

use nalgebra::{Matrix3, Rotation3, Vector3, SVD};
use std::fmt;

pub type Point3 = Vector3<f64>;

/// Tolerance used by [`Pose::is_valid`] for the orthonormality and
/// determinant checks.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// A rigid transform `x ↦ R·x + t`.
///
/// Throughout the crate a pose relating two scans maps points expressed in
/// the candidate (target) frame into the query frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), translation)
    }

    /// Rotation about +z by `yaw` radians followed by `translation`.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        let rotation = *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix();
        Self::new(rotation, translation)
    }

    /// Builds a pose from a rotation vector (axis × angle) and a translation.
    pub fn from_rotation_vector(rotvec: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(*Rotation3::new(rotvec).matrix(), translation)
    }

    /// Row-major 3×4 `[R | t]`, the layout of KITTI pose files.
    pub fn from_row_major_3x4(values: &[f64; 12]) -> Self {
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
            values[10],
        );
        let translation = Vector3::new(values[3], values[7], values[11]);
        Self::new(rotation, translation)
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    #[inline]
    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    /// Largest elementwise deviation of `RᵀR` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    pub fn is_valid(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && self.orthonormality_error() <= ORTHONORMAL_TOLERANCE
            && (self.rotation.determinant() - 1.0).abs() <= ORTHONORMAL_TOLERANCE
    }

    /// Projects the rotation onto the nearest proper rotation matrix
    /// (Frobenius sense).
    pub fn orthonormalized(&self) -> Pose {
        Pose::new(nearest_rotation(&self.rotation), self.translation)
    }

    /// Yaw about the vertical axis, radians in (−π, π].
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Geodesic angle of the rotation, radians in [0, π].
    pub fn rotation_angle(&self) -> f64 {
        // atan2 form stays accurate near zero where acos of the trace does not
        let r = &self.rotation;
        let s = Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        )
        .norm()
            / 2.0;
        let c = (r.trace() - 1.0) / 2.0;
        s.atan2(c)
    }

    /// Rotation angle and translation distance between `self` and `other`.
    pub fn difference(&self, other: &Pose) -> (f64, f64) {
        let delta = self.inverse().compose(other);
        (
            delta.rotation_angle(),
            (self.translation - other.translation).norm(),
        )
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.to_row_major_3x4();
        for (i, x) in v.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{x:e}")?;
        }
        Ok(())
    }
}

/// Nearest rotation matrix `U·diag(1,1,det(UVᵀ))·Vᵀ`.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*m, true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

/// Closed-form rigid alignment minimising `Σ ‖R·source_i + t − target_i‖²`.
///
/// Returns `None` for fewer than one pair. With fewer than three
/// non-collinear pairs the rotation is not unique; the SVD still returns a
/// proper rotation.
pub fn fit_rigid(source: &[Point3], target: &[Point3]) -> Option<Pose> {
    assert_eq!(source.len(), target.len());
    if source.is_empty() {
        return None;
    }
    let n = source.len() as f64;
    let cs = source.iter().sum::<Point3>() / n;
    let ct = target.iter().sum::<Point3>() / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = SVD::new(h, true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = ct - rotation * cs;
    Some(Pose::new(rotation, translation))
}
