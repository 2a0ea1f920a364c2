//! Geometric verification of a loop candidate.
//!
//! 1. node correspondences: Hungarian assignment on a descriptor-cosine cost
//!    gated by label equality and box-size compatibility;
//! 2. outlier pruning by local triangle consistency;
//! 3. coarse pose by RANSAC over 3-point Procrustes fits;
//! 4. acceptance by graph alignment similarity and background grid
//!    similarity after realignment.

pub mod hungarian;

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::{cosine, realign_background, BevConfig};
use crate::error::{Error, Result};
use crate::features::ScanFeatures;
use crate::graph::SemanticGraph;
use crate::pose::{fit_rigid, Point3, Pose};
use crate::scan_io::ClassMap;

/// Cost assigned to node pairs that may not be matched.
pub const REJECTED_COST: f64 = 1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerificationConfig {
    /// Largest accepted per-axis relative box-size difference.
    pub box_tolerance: f64,
    /// Radius around a matched node in which matched neighbours form
    /// triangles, meters.
    pub neighbor_radius: f64,
    /// Largest side-length difference of consistent triangles, meters.
    pub triangle_tolerance: f64,
    pub min_consistent_triangles: usize,
    pub ransac_iterations: usize,
    /// RANSAC inlier residual bound, meters.
    pub inlier_threshold: f64,
    pub graph_threshold: f64,
    pub background_threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            box_tolerance: 0.3,
            neighbor_radius: 20.0,
            triangle_tolerance: 0.5,
            min_consistent_triangles: 1,
            ransac_iterations: 1000,
            inlier_threshold: 0.5,
            graph_threshold: 0.58,
            background_threshold: 0.7,
            min_inliers: 3,
            seed: 0x5eed,
        }
    }
}

impl VerificationConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.box_tolerance >= 0.0)
            || !(self.neighbor_radius > 0.0)
            || !(self.triangle_tolerance >= 0.0)
            || !(self.inlier_threshold > 0.0)
            || self.ransac_iterations == 0
            || !unit(self.graph_threshold)
            || !(-1.0..=1.0).contains(&self.background_threshold)
            || self.min_inliers < 3
        {
            return Err(Error::Config("verification parameters out of range".into()));
        }
        Ok(())
    }
}

/// One-to-one node correspondences `(query node, target node)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchSet {
    pub pairs: Vec<(usize, usize)>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn is_one_to_one(&self) -> bool {
        let mut q = HashSet::new();
        let mut t = HashSet::new();
        self.pairs.iter().all(|&(a, b)| q.insert(a) && t.insert(b))
    }
}

/// `N × M` matching cost: `1 − cos(f_i, f_j)` for same-label nodes with
/// compatible boxes, [`REJECTED_COST`] otherwise.
pub fn affinity_matrix(
    query: &SemanticGraph,
    target: &SemanticGraph,
    box_tolerance: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(query.node_count(), target.node_count(), |i, j| {
        let (a, b) = (&query.nodes[i], &target.nodes[j]);
        if a.label == b.label && a.size.max_relative_difference(&b.size) <= box_tolerance {
            1.0 - cosine(&a.descriptor, &b.descriptor)
        } else {
            REJECTED_COST
        }
    })
}

/// Optimal assignment on `cost`, dropping pairs that land on a rejected cell.
pub fn match_nodes(cost: &DMatrix<f64>) -> MatchSet {
    MatchSet {
        pairs: hungarian::assign(cost)
            .into_iter()
            .filter(|&(i, j)| cost[(i, j)] < REJECTED_COST)
            .collect(),
    }
}

/// Keeps a pair when at least `min_consistent` of the triangles it forms
/// with two matched neighbours (query-side distance ≤ `radius`) have all
/// three sides matching the target-side triangle within `tolerance`. Pairs
/// with fewer than two matched neighbours are kept.
pub fn prune_matches(
    query: &[Point3],
    target: &[Point3],
    matches: &MatchSet,
    radius: f64,
    tolerance: f64,
    min_consistent: usize,
) -> MatchSet {
    let pairs = &matches.pairs;
    let kept = pairs
        .iter()
        .enumerate()
        .filter(|&(k, &(q, t))| {
            let neighbors: Vec<(usize, usize)> = pairs
                .iter()
                .enumerate()
                .filter(|&(m, &(qn, _))| m != k && (query[qn] - query[q]).norm() <= radius)
                .map(|(_, &p)| p)
                .collect();
            if neighbors.len() < 2 {
                return true;
            }
            let side_ok = |qa: usize, qb: usize, ta: usize, tb: usize| {
                ((query[qa] - query[qb]).norm() - (target[ta] - target[tb]).norm()).abs()
                    <= tolerance
            };
            let mut consistent = 0;
            for a in 0..neighbors.len() {
                let (qa, ta) = neighbors[a];
                if !side_ok(q, qa, t, ta) {
                    continue;
                }
                for &(qb, tb) in &neighbors[a + 1..] {
                    if side_ok(q, qb, t, tb) && side_ok(qa, qb, ta, tb) {
                        consistent += 1;
                        if consistent >= min_consistent {
                            return true;
                        }
                    }
                }
            }
            false
        })
        .map(|(_, &p)| p)
        .collect();
    MatchSet { pairs: kept }
}

/// Residual of a correspondence under `pose`: `‖R·c_t + t − c_q‖`.
#[inline]
pub fn residual(pose: &Pose, query: &Point3, target: &Point3) -> f64 {
    (pose.transform_point(target) - query).norm()
}

fn collinear(a: &Point3, b: &Point3, c: &Point3) -> bool {
    (b - a).cross(&(c - a)).norm() < 1e-6
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacOutcome {
    pub pose: Pose,
    pub inliers: MatchSet,
    pub hypotheses: usize,
}

/// Robust rigid fit mapping target centers onto query centers.
///
/// Each iteration fits three distinct pairs (skipping collinear samples) by
/// Procrustes and counts pairs with residual ≤ `threshold`; the hypothesis
/// with most inliers (earliest on ties) is refit on all its inliers.
pub fn ransac_svd(
    matches: &MatchSet,
    query: &[Point3],
    target: &[Point3],
    iterations: usize,
    threshold: f64,
    rng: &mut impl rand::Rng,
) -> Result<RansacOutcome> {
    let o = matches.len();
    if o < 3 {
        return Err(Error::InsufficientMatches {
            needed: 3,
            available: o,
        });
    }
    let qs: Vec<Point3> = matches.pairs.iter().map(|&(q, _)| query[q]).collect();
    let ts: Vec<Point3> = matches.pairs.iter().map(|&(_, t)| target[t]).collect();

    let mut best: Option<(Pose, Vec<usize>)> = None;
    let mut hypotheses = 0;
    for _ in 0..iterations {
        let s = sample(rng, o, 3);
        let (a, b, c) = (s.index(0), s.index(1), s.index(2));
        if collinear(&ts[a], &ts[b], &ts[c]) || collinear(&qs[a], &qs[b], &qs[c]) {
            continue;
        }
        let Some(pose) = fit_rigid(&[ts[a], ts[b], ts[c]], &[qs[a], qs[b], qs[c]]) else {
            continue;
        };
        hypotheses += 1;
        let inliers: Vec<usize> = (0..o)
            .filter(|&k| residual(&pose, &qs[k], &ts[k]) <= threshold)
            .collect();
        if best.as_ref().is_none_or(|(_, b)| inliers.len() > b.len()) {
            let all = inliers.len() == o;
            best = Some((pose, inliers));
            if all {
                break;
            }
        }
    }
    let (pose, inliers) = best.ok_or(Error::InsufficientMatches {
        needed: 3,
        available: 0,
    })?;
    let src: Vec<Point3> = inliers.iter().map(|&k| ts[k]).collect();
    let dst: Vec<Point3> = inliers.iter().map(|&k| qs[k]).collect();
    let refit = if inliers.len() >= 3 {
        fit_rigid(&src, &dst).unwrap_or(pose)
    } else {
        pose
    };
    Ok(RansacOutcome {
        pose: refit,
        inliers: MatchSet {
            pairs: inliers.iter().map(|&k| matches.pairs[k]).collect(),
        },
        hypotheses,
    })
}

/// `exp(−mean residual)` of the inlier correspondences under `pose`.
pub fn graph_similarity(
    pose: &Pose,
    inliers: &MatchSet,
    query: &[Point3],
    target: &[Point3],
) -> f64 {
    let residuals: Vec<f64> = inliers
        .pairs
        .iter()
        .map(|&(q, t)| residual(pose, &query[q], &target[t]))
        .collect();
    similarity_from_residuals(&residuals)
}

pub fn similarity_from_residuals(residuals: &[f64]) -> f64 {
    assert!(
        !residuals.is_empty(),
        "graph similarity needs at least one inlier"
    );
    (-residuals.iter().sum::<f64>() / residuals.len() as f64).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationResult {
    pub accepted: bool,
    pub coarse: Pose,
    pub graph_similarity: f64,
    pub background_similarity: f64,
    /// Hungarian matches before pruning.
    pub matched: usize,
    /// Matches surviving triangle pruning.
    pub pruned: usize,
    pub inliers: MatchSet,
    pub reason: Option<String>,
}

impl VerificationResult {
    fn rejected(reason: String, matched: usize, pruned: usize) -> Self {
        Self {
            accepted: false,
            coarse: Pose::identity(),
            graph_similarity: 0.0,
            background_similarity: 0.0,
            matched,
            pruned,
            inliers: MatchSet::default(),
            reason: Some(reason),
        }
    }

    pub fn inlier_count(&self) -> usize {
        self.inliers.len()
    }
}

/// Runs the four verification steps for `candidate` against `query`.
pub fn verify(
    query: &ScanFeatures,
    candidate: &ScanFeatures,
    classes: &ClassMap,
    bev: &BevConfig,
    config: &VerificationConfig,
) -> VerificationResult {
    let cost = affinity_matrix(&query.graph, &candidate.graph, config.box_tolerance);
    let matches = match_nodes(&cost);
    let qc = query.graph.centers();
    let tc = candidate.graph.centers();
    let pruned = prune_matches(
        &qc,
        &tc,
        &matches,
        config.neighbor_radius,
        config.triangle_tolerance,
        config.min_consistent_triangles,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let outcome = match ransac_svd(
        &pruned,
        &qc,
        &tc,
        config.ransac_iterations,
        config.inlier_threshold,
        &mut rng,
    ) {
        Ok(o) => o,
        Err(e) => return VerificationResult::rejected(e.to_string(), matches.len(), pruned.len()),
    };
    let u = outcome.inliers.len();
    let s_graph = if u > 0 {
        graph_similarity(&outcome.pose, &outcome.inliers, &qc, &tc)
    } else {
        0.0
    };
    let realigned = realign_background(&candidate.scan, &outcome.pose, classes, bev);
    let s_bg = query.bev.similarity(&realigned);

    let reason = if u < config.min_inliers {
        Some(format!("{u} inliers < {}", config.min_inliers))
    } else if s_graph < config.graph_threshold {
        Some(format!(
            "graph similarity {s_graph:.4} < {}",
            config.graph_threshold
        ))
    } else if s_bg < config.background_threshold {
        Some(format!(
            "background similarity {s_bg:.4} < {}",
            config.background_threshold
        ))
    } else {
        None
    };
    VerificationResult {
        accepted: reason.is_none(),
        coarse: outcome.pose,
        graph_similarity: s_graph,
        background_similarity: s_bg,
        matched: matches.len(),
        pruned: pruned.len(),
        inliers: outcome.inliers,
        reason,
    }
}
