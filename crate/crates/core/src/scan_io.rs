//! On-disk scan, label, pose and class-map formats.
//!
//! * scans: KITTI velodyne `.bin` (little-endian `f32` quadruples x, y, z,
//!   intensity) or whitespace-separated `x y z` text;
//! * labels: SemanticKITTI `.label` (little-endian `u32`, class id in the
//!   lower 16 bits);
//! * poses: KITTI odometry text, 12 numbers per line (row-major 3×4);
//! * class map: TOML listing every class id with its role.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{Point3, Pose};

pub type ClassId = u32;

/// Points with per-point class labels, in the sensor frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SemanticScan {
    pub scan_id: usize,
    pub points: Vec<Point3>,
    /// Either empty (geometry only) or one label per point.
    pub labels: Vec<ClassId>,
}

impl SemanticScan {
    pub fn new(scan_id: usize, points: Vec<Point3>, labels: Vec<ClassId>) -> Self {
        debug_assert!(labels.is_empty() || labels.len() == points.len());
        Self {
            scan_id,
            points,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.len() == self.points.len()
    }

    /// Points whose label is in `classes`, in scan order.
    pub fn points_of<'a>(
        &'a self,
        classes: &'a BTreeSet<ClassId>,
    ) -> impl Iterator<Item = (usize, &'a Point3)> + 'a {
        self.points
            .iter()
            .zip(&self.labels)
            .enumerate()
            .filter(move |(_, (_, l))| classes.contains(l))
            .map(|(i, (p, _))| (i, p))
    }

    /// Copy of the scan with every point mapped through `pose`.
    pub fn transformed(&self, pose: &Pose) -> SemanticScan {
        SemanticScan {
            scan_id: self.scan_id,
            points: self
                .points
                .iter()
                .map(|p| pose.transform_point(p))
                .collect(),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanFormat {
    KittiBin,
    XyzText,
}

impl std::str::FromStr for ScanFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kitti_bin" | "bin" => Ok(ScanFormat::KittiBin),
            "xyz_text" | "xyz" | "txt" => Ok(ScanFormat::XyzText),
            other => Err(Error::Config(format!("unknown scan format `{other}`"))),
        }
    }
}

/// A geometry-only scan plus the raw record indices that were dropped for
/// having non-finite coordinates.
#[derive(Clone, Debug)]
pub struct LoadedScan {
    pub scan: SemanticScan,
    pub record_count: usize,
    pub dropped: Vec<usize>,
}

impl LoadedScan {
    pub fn dropped_count(&self) -> usize {
        self.dropped.len()
    }

    /// Attaches labels read for the raw records, discarding the labels of
    /// dropped points.
    pub fn with_labels(mut self, labels: Vec<ClassId>) -> Result<SemanticScan> {
        if labels.len() != self.record_count {
            return Err(Error::Labels {
                path: Default::default(),
                reason: format!(
                    "{} labels for a scan of {} records",
                    labels.len(),
                    self.record_count
                ),
            });
        }
        let mut dropped = self.dropped.iter().peekable();
        self.scan.labels = labels
            .into_iter()
            .enumerate()
            .filter(|(i, _)| {
                if dropped.peek() == Some(&i) {
                    dropped.next();
                    false
                } else {
                    true
                }
            })
            .map(|(_, l)| l)
            .collect();
        Ok(self.scan)
    }
}

const KITTI_RECORD_BYTES: usize = 16;

pub fn load_scan(path: impl AsRef<Path>, format: ScanFormat) -> Result<LoadedScan> {
    let path = path.as_ref();
    match format {
        ScanFormat::KittiBin => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            parse_kitti_bin(&bytes).map_err(|(offset, reason)| Error::ScanFormat {
                path: path.to_path_buf(),
                offset,
                reason,
            })
        }
        ScanFormat::XyzText => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_xyz_text(&text).map_err(|(offset, reason)| Error::ScanFormat {
                path: path.to_path_buf(),
                offset,
                reason,
            })
        }
    }
}

fn collect_finite(raw: Vec<Point3>) -> LoadedScan {
    let record_count = raw.len();
    let mut points = Vec::with_capacity(raw.len());
    let mut dropped = Vec::new();
    for (i, p) in raw.into_iter().enumerate() {
        if p.iter().all(|v| v.is_finite()) {
            points.push(p);
        } else {
            dropped.push(i);
        }
    }
    LoadedScan {
        scan: SemanticScan::new(0, points, Vec::new()),
        record_count,
        dropped,
    }
}

pub(crate) fn parse_kitti_bin(bytes: &[u8]) -> std::result::Result<LoadedScan, (u64, String)> {
    if !bytes.len().is_multiple_of(KITTI_RECORD_BYTES) {
        let offset = (bytes.len() / KITTI_RECORD_BYTES * KITTI_RECORD_BYTES) as u64;
        return Err((
            offset,
            format!(
                "trailing {} bytes do not form a 16-byte record",
                bytes.len() % KITTI_RECORD_BYTES
            ),
        ));
    }
    let raw = bytes
        .chunks_exact(KITTI_RECORD_BYTES)
        .map(|rec| {
            Vector3::new(
                LittleEndian::read_f32(&rec[0..4]) as f64,
                LittleEndian::read_f32(&rec[4..8]) as f64,
                LittleEndian::read_f32(&rec[8..12]) as f64,
            )
        })
        .collect();
    Ok(collect_finite(raw))
}

fn parse_xyz_text(text: &str) -> std::result::Result<LoadedScan, (u64, String)> {
    let mut raw = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len() as u64;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let mut xyz = [0.0f64; 3];
        let mut fields = body.split_whitespace();
        for v in xyz.iter_mut() {
            let field = fields
                .next()
                .ok_or_else(|| (start, "expected 3 coordinates".to_string()))?;
            *v = field
                .parse()
                .map_err(|_| (start, format!("not a number: `{field}`")))?;
        }
        raw.push(Vector3::from(xyz));
    }
    Ok(collect_finite(raw))
}

pub fn write_scan_bin(path: impl AsRef<Path>, points: &[Point3]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(points.len() * KITTI_RECORD_BYTES);
    for p in points {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0] {
            buf.write_f32::<LittleEndian>(v).expect("vec write");
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads SemanticKITTI labels; the class id is the lower 16 bits of each
/// record and the instance id in the upper bits is ignored.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<ClassId>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&bytes).map_err(|reason| Error::Labels {
        path: path.to_path_buf(),
        reason,
    })
}

/// [`load_labels`] plus a record-count check against the paired scan.
pub fn load_labels_for(path: impl AsRef<Path>, expected: usize) -> Result<Vec<ClassId>> {
    let path = path.as_ref();
    let labels = load_labels(path)?;
    if labels.len() != expected {
        return Err(Error::Labels {
            path: path.to_path_buf(),
            reason: format!("{} records for a scan of {expected} points", labels.len()),
        });
    }
    Ok(labels)
}

pub(crate) fn decode_labels(bytes: &[u8]) -> std::result::Result<Vec<ClassId>, String> {
    if !bytes.len().is_multiple_of(4) {
        return Err(format!(
            "file length {} is not a multiple of 4 bytes",
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|r| LittleEndian::read_u32(r) & 0xFFFF)
        .collect())
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[ClassId]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(labels.len() * 4);
    for &l in labels {
        buf.write_u32::<LittleEndian>(l).expect("vec write");
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Drift beyond which a loaded rotation is projected back onto SO(3).
const POSE_DRIFT_TOLERANCE: f64 = 1e-6;

pub fn load_poses(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut poses = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pose = parse_pose_line(&line).map_err(|reason| Error::PoseParse {
            path: path.to_path_buf(),
            line: idx + 1,
            reason,
        })?;
        poses.push(pose);
    }
    Ok(poses)
}

pub fn parse_pose_line(line: &str) -> std::result::Result<Pose, String> {
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|f| f.parse::<f64>().map_err(|_| format!("not a number: `{f}`")))
        .collect::<std::result::Result<_, _>>()?;
    if values.len() != 12 {
        return Err(format!("expected 12 numbers, found {}", values.len()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err("non-finite value".into());
    }
    let mut arr = [0.0; 12];
    arr.copy_from_slice(&values);
    let pose = Pose::from_row_major_3x4(&arr);
    let drift = pose
        .orthonormality_error()
        .max((pose.rotation.determinant() - 1.0).abs());
    Ok(if drift > POSE_DRIFT_TOLERANCE {
        pose.orthonormalized()
    } else {
        pose
    })
}

pub fn format_pose_line(pose: &Pose) -> String {
    pose.to_row_major_3x4()
        .iter()
        .map(|v| format!("{v:e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_poses(path: impl AsRef<Path>, poses: &[Pose]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for p in poses {
        writeln!(out, "{}", format_pose_line(p)).expect("vec write");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassRole {
    Foreground,
    Background,
    Moving,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: ClassId,
    pub name: String,
    pub role: ClassRole,
    /// Single-linkage clustering radius, meters (foreground classes only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_distance: Option<f64>,
}

/// Which class ids are graph nodes, which feed the background descriptor and
/// plane stage, and which are discarded as moving.
///
/// Declaration order is significant: it fixes the layout of every
/// class-indexed histogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMap {
    pub classes: Vec<ClassEntry>,
}

impl Default for ClassMap {
    /// SemanticKITTI ids: vehicle 10, trunk 71, pole 80 and the sign slot 81
    /// reused for lamps; road 40, building 50, fence 51, vegetation 70;
    /// the moving-* classes 252–259.
    fn default() -> Self {
        let fg = |id, name: &str, r| ClassEntry {
            id,
            name: name.into(),
            role: ClassRole::Foreground,
            cluster_distance: Some(r),
        };
        let other = |id, name: &str, role| ClassEntry {
            id,
            name: name.into(),
            role,
            cluster_distance: None,
        };
        let mut classes = vec![
            fg(10, "vehicle", 0.8),
            fg(71, "trunk", 0.4),
            fg(80, "pole", 0.4),
            fg(81, "lamp", 0.4),
            other(40, "road", ClassRole::Background),
            other(50, "building", ClassRole::Background),
            other(51, "fence", ClassRole::Background),
            other(70, "vegetation", ClassRole::Background),
        ];
        for (id, name) in [
            (252, "moving-car"),
            (253, "moving-bicyclist"),
            (254, "moving-person"),
            (255, "moving-motorcyclist"),
            (256, "moving-on-rails"),
            (257, "moving-bus"),
            (258, "moving-truck"),
            (259, "moving-other-vehicle"),
        ] {
            classes.push(other(id, name, ClassRole::Moving));
        }
        ClassMap { classes }
    }
}

impl ClassMap {
    pub const VEHICLE: ClassId = 10;
    pub const TRUNK: ClassId = 71;
    pub const POLE: ClassId = 80;
    pub const LAMP: ClassId = 81;
    pub const ROAD: ClassId = 40;
    pub const BUILDING: ClassId = 50;
    pub const FENCE: ClassId = 51;
    pub const VEGETATION: ClassId = 70;
    pub const MOVING_CAR: ClassId = 252;

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.classes {
            if !seen.insert(c.id) {
                return Err(Error::Config(format!(
                    "class {} listed more than once; role sets must be disjoint",
                    c.id
                )));
            }
            if c.role == ClassRole::Foreground {
                match c.cluster_distance {
                    Some(r) if r > 0.0 && r.is_finite() => {}
                    _ => {
                        return Err(Error::Config(format!(
                            "foreground class {} needs a positive cluster_distance",
                            c.id
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let map: ClassMap =
            toml::from_str(text).map_err(|e| Error::Config(format!("class map: {e}")))?;
        map.validate()?;
        Ok(map)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("class map serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn role(&self, id: ClassId) -> Option<ClassRole> {
        self.classes.iter().find(|c| c.id == id).map(|c| c.role)
    }

    fn with_role(&self, role: ClassRole) -> impl Iterator<Item = &ClassEntry> {
        self.classes.iter().filter(move |c| c.role == role)
    }

    /// Foreground classes in declaration order.
    pub fn foreground(&self) -> Vec<ClassId> {
        self.with_role(ClassRole::Foreground)
            .map(|c| c.id)
            .collect()
    }

    /// Background classes in declaration order.
    pub fn background(&self) -> Vec<ClassId> {
        self.with_role(ClassRole::Background)
            .map(|c| c.id)
            .collect()
    }

    pub fn background_set(&self) -> BTreeSet<ClassId> {
        self.with_role(ClassRole::Background)
            .map(|c| c.id)
            .collect()
    }

    pub fn moving_set(&self) -> BTreeSet<ClassId> {
        self.with_role(ClassRole::Moving).map(|c| c.id).collect()
    }

    pub fn foreground_index(&self, id: ClassId) -> Option<usize> {
        self.with_role(ClassRole::Foreground)
            .position(|c| c.id == id)
    }

    pub fn background_index(&self, id: ClassId) -> Option<usize> {
        self.with_role(ClassRole::Background)
            .position(|c| c.id == id)
    }

    pub fn cluster_distance(&self, id: ClassId) -> Option<f64> {
        self.classes
            .iter()
            .find(|c| c.id == id)
            .and_then(|c| c.cluster_distance)
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.classes
            .iter()
            .find(|c| c.id == id)
            .map(|c| c.name.as_str())
    }

    /// Number of unordered foreground label pairs (including same-class pairs).
    pub fn edge_category_count(&self) -> usize {
        let n = self.foreground().len();
        n * (n + 1) / 2
    }

    /// Index of the unordered label pair `{a, b}` in the fixed category order
    /// (0,0), (0,1), …, (0,n−1), (1,1), … over foreground declaration order.
    pub fn edge_category(&self, a: ClassId, b: ClassId) -> Option<usize> {
        let n = self.foreground().len();
        let a = self.foreground_index(a)?;
        let b = self.foreground_index(b)?;
        let (i, j) = (a.min(b), a.max(b));
        Some(i * (2 * n - i + 1) / 2 + (j - i))
    }
}

/// Drops points of moving classes; unlabeled scans are returned unchanged.
pub fn remove_moving(scan: &SemanticScan, classes: &ClassMap) -> SemanticScan {
    if !scan.is_labeled() {
        return scan.clone();
    }
    let moving = classes.moving_set();
    let (points, labels) = scan
        .points
        .iter()
        .zip(&scan.labels)
        .filter(|(_, l)| !moving.contains(l))
        .map(|(p, l)| (*p, *l))
        .unzip();
    SemanticScan::new(scan.scan_id, points, labels)
}

/// Loads a labeled scan (`.bin` + `.label`), dropping non-finite and moving
/// points consistently from both.
pub fn load_labeled_scan(
    scan_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
    format: ScanFormat,
    classes: &ClassMap,
    scan_id: usize,
) -> Result<SemanticScan> {
    let loaded = load_scan(scan_path, format)?;
    let label_path = label_path.as_ref();
    let labels = load_labels_for(label_path, loaded.record_count)?;
    if !loaded.dropped.is_empty() {
        log::warn!(
            "scan {scan_id}: dropped {} non-finite points",
            loaded.dropped_count()
        );
    }
    let mut scan = loaded.with_labels(labels)?;
    scan.scan_id = scan_id;
    Ok(remove_moving(&scan, classes))
}
