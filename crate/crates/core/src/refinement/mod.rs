//! Coarse-fine-refine registration after an accepted verification:
//! dense ICP on matched instance points, then point-to-plane refinement on
//! background points. Each stage starts from the previous stage's pose and
//! falls back to it when it degrades.

pub mod icp;
pub mod normals;
pub mod plane;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ScanFeatures;
use crate::pose::{Point3, Pose};
use crate::spatial::voxel_downsample;
use crate::verification::MatchSet;

pub use icp::{icp_instances, InstancePair};
pub use normals::{estimate_normals, NormalEstimate};
pub use plane::{point_to_plane_refine, PlaneCloud, PlaneCorrespondence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    pub icp_max_correspondence: f64,
    pub icp_max_iterations: usize,
    pub icp_translation_tolerance: f64,
    pub icp_rotation_tolerance: f64,
    pub plane_max_correspondence: f64,
    pub plane_max_iterations: usize,
    /// Stop once the norm of the 6-vector increment is below this.
    pub plane_tolerance: f64,
    pub normal_neighbors: usize,
    pub min_planarity: f64,
    pub normal_agreement_deg: f64,
    /// Background voxel size before normal estimation, meters.
    pub voxel_size: f64,
    /// Relative singular-value floor of the 6×6 normal equations.
    pub rank_tolerance: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            icp_max_correspondence: 1.0,
            icp_max_iterations: 30,
            icp_translation_tolerance: 1e-4,
            icp_rotation_tolerance: 1e-4,
            plane_max_correspondence: 0.5,
            plane_max_iterations: 20,
            plane_tolerance: 1e-5,
            normal_neighbors: 10,
            min_planarity: 0.4,
            normal_agreement_deg: 10.0,
            voxel_size: 0.2,
            rank_tolerance: 1e-6,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.icp_max_correspondence > 0.0)
            || !(self.plane_max_correspondence > 0.0)
            || self.normal_neighbors < 3
            || !(self.voxel_size > 0.0)
            || !(0.0..=90.0).contains(&self.normal_agreement_deg)
        {
            return Err(Error::Config("refinement parameters out of range".into()));
        }
        Ok(())
    }
}

/// Outcome of one registration stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageReport {
    pub iterations: usize,
    /// Mean residual after the last update (meters; point-to-plane distance
    /// for the plane stage).
    pub residual: f64,
    pub correspondences: usize,
    pub converged: bool,
    /// The stage could not run and returned its initial pose.
    pub degraded: bool,
    pub rank_deficient: bool,
    /// Objective before and after each update, under that update's fixed
    /// correspondences.
    pub objective_trace: Vec<(f64, f64)>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationReport {
    pub coarse: Pose,
    pub icp: Pose,
    pub refined: Pose,
    pub icp_stage: StageReport,
    pub plane_stage: StageReport,
}

impl RegistrationReport {
    /// True when a stage fell back to its input pose.
    pub fn fell_back(&self) -> bool {
        self.icp_stage.degraded || self.plane_stage.degraded || self.plane_stage.rank_deficient
    }
}

/// Background points of one scan, downsampled, with normals.
pub fn plane_cloud(background: &[Point3], config: &RefinementConfig) -> PlaneCloud {
    let points = voxel_downsample(background, config.voxel_size);
    let normals = estimate_normals(&points, config.normal_neighbors, config.min_planarity);
    PlaneCloud { points, normals }
}

pub fn instance_pairs(
    query: &ScanFeatures,
    target: &ScanFeatures,
    matches: &MatchSet,
) -> Vec<InstancePair> {
    matches
        .pairs
        .iter()
        .map(|&(q, t)| InstancePair {
            query: query.instance_points(q),
            target: target.instance_points(t),
        })
        .collect()
}

fn moved_by(a: &Pose, b: &Pose) -> f64 {
    (a.translation - b.translation).norm()
}

/// Runs both refinement stages from `coarse`.
///
/// A stage whose result moves the translation by more than its
/// correspondence cap, or which degrades, is discarded in favour of its
/// input pose.
pub fn refine_from_parts(
    pairs: &[InstancePair],
    query_planes: &PlaneCloud,
    target_planes: &PlaneCloud,
    coarse: &Pose,
    config: &RefinementConfig,
) -> RegistrationReport {
    let (mut icp, mut icp_stage) = if pairs.len() >= 3 {
        icp_instances(pairs, coarse, config)
    } else {
        let stage = StageReport {
            degraded: true,
            note: Some(format!("{} matched instances", pairs.len())),
            ..Default::default()
        };
        (*coarse, stage)
    };
    if !icp_stage.degraded && moved_by(&icp, coarse) > config.icp_max_correspondence {
        icp_stage.degraded = true;
        icp_stage.note = Some("instance ICP diverged".into());
        icp = *coarse;
    }

    let (mut refined, mut plane_stage) =
        point_to_plane_refine(query_planes, target_planes, &icp, config);
    if !plane_stage.degraded && moved_by(&refined, &icp) > config.plane_max_correspondence {
        plane_stage.degraded = true;
        plane_stage.note = Some("plane refinement diverged".into());
        refined = icp;
    }
    if plane_stage.rank_deficient {
        plane_stage
            .note
            .get_or_insert_with(|| "degenerate normal field".into());
        refined = icp;
    }
    RegistrationReport {
        coarse: *coarse,
        icp,
        refined,
        icp_stage,
        plane_stage,
    }
}

/// Both stages on extracted features; the plane clouds come from
/// [`ScanFeatures::planes`].
pub fn refine(
    query: &ScanFeatures,
    target: &ScanFeatures,
    matches: &MatchSet,
    coarse: &Pose,
    config: &RefinementConfig,
) -> RegistrationReport {
    let pairs = instance_pairs(query, target, matches);
    refine_from_parts(&pairs, &query.planes, &target.planes, coarse, config)
}

/// Convenience for tests and the bench: points of `cloud` mapped by `pose`.
pub fn transform_points(points: &[Point3], pose: &Pose) -> Vec<Point3> {
    points.iter().map(|p| pose.transform_point(p)).collect()
}
