//! Loop-closure detection and registration metrics.
//!
//! Detection: precision/recall over a threshold sweep, the maximum F1 score
//! and extended precision `EP = (P_R0 + R_P100) / 2`, where `P_R0` is the
//! precision at the strictest threshold and `R_P100` the largest recall
//! reached at full precision. Registration: relative translation error,
//! relative yaw error and the recall of registrations under 2 m / 5°.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::pose::Pose;

/// Pairs closer than this (meters) are true loops.
pub const POSITIVE_DISTANCE: f64 = 3.0;
/// Pairs farther than this (meters) are non-loops; pairs in between are
/// excluded from detection statistics.
pub const NEGATIVE_DISTANCE: f64 = 20.0;
pub const RR_MAX_TRANSLATION: f64 = 2.0;
pub const RR_MAX_YAW_DEG: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDecision {
    pub query_id: usize,
    pub candidate_id: usize,
    /// Larger means more confident in a loop.
    pub score: f64,
    /// `None` for pairs in the gray zone between the two distance rules.
    pub is_true_loop: Option<bool>,
    pub estimated: Option<Pose>,
    pub ground_truth: Option<Pose>,
}

/// Ground-truth label from the distance between the two sensor positions.
pub fn label_by_distance(distance: f64) -> Option<bool> {
    if distance < POSITIVE_DISTANCE {
        Some(true)
    } else if distance > NEGATIVE_DISTANCE {
        Some(false)
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

impl PrPoint {
    pub fn f1(&self) -> f64 {
        let s = self.precision + self.recall;
        if s > 0.0 {
            2.0 * self.precision * self.recall / s
        } else {
            0.0
        }
    }
}

/// One point per distinct score, strictest threshold first; a decision is
/// predicted positive when `score ≥ threshold`.
pub fn pr_sweep(decisions: &[LabeledDecision]) -> Result<Vec<PrPoint>> {
    let mut labeled: Vec<(f64, bool)> = decisions
        .iter()
        .filter_map(|d| d.is_true_loop.map(|t| (d.score, t)))
        .collect();
    if labeled.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::Metrics("non-finite score".into()));
    }
    let positives = labeled.iter().filter(|(_, t)| *t).count();
    if positives == 0 || positives == labeled.len() {
        return Err(Error::Metrics(
            "need at least one positive and one negative decision".into(),
        ));
    }
    labeled.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut sweep = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < labeled.len() {
        let threshold = labeled[i].0;
        while i < labeled.len() && labeled[i].0 == threshold {
            if labeled[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        sweep.push(PrPoint {
            threshold,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    Ok(sweep)
}

pub fn f1_max(sweep: &[PrPoint]) -> f64 {
    sweep.iter().map(PrPoint::f1).fold(0.0, f64::max)
}

pub fn extended_precision(sweep: &[PrPoint]) -> f64 {
    let Some(strictest) = sweep.first() else {
        return 0.0;
    };
    let r_p100 = sweep
        .iter()
        .filter(|p| p.precision >= 1.0)
        .map(|p| p.recall)
        .fold(0.0, f64::max);
    0.5 * (strictest.precision + r_p100)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseError {
    /// Meters.
    pub translation: f64,
    /// Degrees in [0, 180].
    pub yaw_deg: f64,
}

impl PoseError {
    pub fn is_success(&self) -> bool {
        self.translation < RR_MAX_TRANSLATION && self.yaw_deg < RR_MAX_YAW_DEG
    }
}

pub fn pose_errors(estimated: &Pose, ground_truth: &Pose) -> PoseError {
    let translation = (estimated.translation - ground_truth.translation).norm();
    let mut d = (estimated.yaw() - ground_truth.yaw()).rem_euclid(std::f64::consts::TAU);
    if d > std::f64::consts::PI {
        d = std::f64::consts::TAU - d;
    }
    PoseError {
        translation,
        yaw_deg: d.to_degrees(),
    }
}

/// Percentage of registrations with RTE < 2 m and RYE < 5°.
pub fn registration_recall(errors: &[PoseError]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    100.0 * errors.iter().filter(|e| e.is_success()).count() as f64 / errors.len() as f64
}

/// Nearest-rank percentile (`q` in [0, 1]) of an unsorted sample.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `(metric, value)` rows, written one per line as `name value`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsSummary {
    pub rows: Vec<(String, f64)>,
}

impl MetricsSummary {
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.rows.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, value) in &self.rows {
            writeln!(out, "{name} {value}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut summary = MetricsSummary::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(name), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::TextRecord {
                    line: i + 1,
                    reason: "expected `name value`".into(),
                });
            };
            let value = value.parse().map_err(|_| Error::TextRecord {
                line: i + 1,
                reason: format!("bad number `{value}`"),
            })?;
            summary.push(name, value);
        }
        Ok(summary)
    }
}

/// Plot-ready table: a header then `threshold precision recall` rows.
pub fn pr_table(sweep: &[PrPoint]) -> String {
    let mut out = String::from("threshold precision recall\n");
    for p in sweep {
        writeln!(out, "{} {} {}", p.threshold, p.precision, p.recall).unwrap();
    }
    out
}
