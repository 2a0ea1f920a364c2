//! Scan-level retrieval descriptor `F = normalize(F_f) ⧺ normalize(F_b)`.
//!
//! `F_f` summarises the foreground graph (edge histogram plus node counts
//! per class). `F_b` is the ring key of a semantic polar bird's-eye-view grid
//! over the background points: for every ring and background class, the
//! fraction of sectors that class occupies. The ring key does not depend on
//! where the sectors start, so it is invariant to sensor yaw.

use std::io::{Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphConfig, SemanticGraph};
use crate::pose::{Point3, Pose};
use crate::scan_io::{ClassMap, SemanticScan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BevConfig {
    pub rings: usize,
    pub sectors: usize,
    /// Planar range covered by the grid, meters.
    pub max_range: f64,
}

impl Default for BevConfig {
    fn default() -> Self {
        Self {
            rings: 20,
            sectors: 60,
            max_range: 80.0,
        }
    }
}

impl BevConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rings == 0 || self.sectors == 0 || !(self.max_range > 0.0) {
            return Err(Error::Config(
                "BEV grid needs rings ≥ 1, sectors ≥ 1 and a positive range".into(),
            ));
        }
        Ok(())
    }

    /// `(ring, sector)` of a point, or `None` outside the grid's range.
    pub fn cell_of(&self, p: &Point3) -> Option<(usize, usize)> {
        let rho = p.x.hypot(p.y);
        if !(rho < self.max_range) {
            return None;
        }
        let ring = ((rho * self.rings as f64 / self.max_range) as usize).min(self.rings - 1);
        let theta = p.y.atan2(p.x);
        let sector =
            (((theta + std::f64::consts::PI) * self.sectors as f64 / std::f64::consts::TAU)
                as usize)
                .min(self.sectors - 1);
        Some((ring, sector))
    }
}

/// Polar grid of background point counts, `rings × sectors × classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundBev {
    pub rings: usize,
    pub sectors: usize,
    pub classes: usize,
    /// Row-major `[ring][sector][class]`.
    pub grid: Vec<f64>,
}

impl BackgroundBev {
    pub fn zeros(rings: usize, sectors: usize, classes: usize) -> Self {
        Self {
            rings,
            sectors,
            classes,
            grid: vec![0.0; rings * sectors * classes],
        }
    }

    #[inline]
    pub fn index(&self, ring: usize, sector: usize, class: usize) -> usize {
        (ring * self.sectors + sector) * self.classes + class
    }

    pub fn get(&self, ring: usize, sector: usize, class: usize) -> f64 {
        self.grid[self.index(ring, sector, class)]
    }

    /// `rings × classes`, row-major: fraction of sectors of each ring where
    /// the class has at least one point.
    pub fn ring_key(&self) -> Vec<f64> {
        let mut key = vec![0.0; self.rings * self.classes];
        for r in 0..self.rings {
            for s in 0..self.sectors {
                for c in 0..self.classes {
                    if self.get(r, s, c) > 0.0 {
                        key[r * self.classes + c] += 1.0;
                    }
                }
            }
        }
        let inv = 1.0 / self.sectors as f64;
        key.iter_mut().for_each(|v| *v *= inv);
        key
    }

    /// Grid with every sector index advanced by `shift` (mod sectors).
    pub fn shifted(&self, shift: usize) -> Self {
        let mut out = Self::zeros(self.rings, self.sectors, self.classes);
        for r in 0..self.rings {
            for s in 0..self.sectors {
                for c in 0..self.classes {
                    let dst = out.index(r, (s + shift) % self.sectors, c);
                    out.grid[dst] = self.get(r, s, c);
                }
            }
        }
        out
    }

    /// Cosine similarity of the flattened grids; zero if either is empty.
    pub fn similarity(&self, other: &BackgroundBev) -> f64 {
        cosine(&self.grid, &other.grid)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na <= 0.0 || nb <= 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

fn accumulate(
    points: impl Iterator<Item = (Point3, usize)>,
    classes: usize,
    config: &BevConfig,
) -> BackgroundBev {
    let mut bev = BackgroundBev::zeros(config.rings, config.sectors, classes);
    for (p, c) in points {
        if let Some((r, s)) = config.cell_of(&p) {
            let i = bev.index(r, s, c);
            bev.grid[i] += 1.0;
        }
    }
    bev
}

/// Polar grid over the scan's background points.
pub fn background_descriptor(
    scan: &SemanticScan,
    classes: &ClassMap,
    config: &BevConfig,
) -> BackgroundBev {
    realign_background(scan, &Pose::identity(), classes, config)
}

/// Polar grid over the scan's background points after mapping them through
/// `pose`, i.e. the grid the query sensor would see for this scan's
/// background.
pub fn realign_background(
    scan: &SemanticScan,
    pose: &Pose,
    classes: &ClassMap,
    config: &BevConfig,
) -> BackgroundBev {
    let bg = classes.background();
    let points = scan.points.iter().zip(&scan.labels).filter_map(|(p, l)| {
        bg.iter()
            .position(|c| c == l)
            .map(|c| (pose.transform_point(p), c))
    });
    accumulate(points, bg.len(), config)
}

/// Global edge histogram followed by node counts per foreground class.
pub fn foreground_descriptor(
    graph: &SemanticGraph,
    graph_config: &GraphConfig,
    classes: &ClassMap,
) -> Vec<f64> {
    let mut f = graph.edge_histogram(graph_config, classes);
    f.extend(graph.label_counts(classes));
    f
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanDescriptor {
    pub foreground_dim: usize,
    /// Unit-normalized `F_f` followed by unit-normalized `F_b`.
    pub values: Vec<f64>,
}

impl ScanDescriptor {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn foreground(&self) -> &[f64] {
        &self.values[..self.foreground_dim]
    }

    pub fn background(&self) -> &[f64] {
        &self.values[self.foreground_dim..]
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// Per-segment l2 normalization then concatenation; all-zero segments stay
/// zero.
pub fn fuse(foreground: &[f64], background: &[f64]) -> ScanDescriptor {
    let mut values = normalized(foreground);
    values.extend(normalized(background));
    ScanDescriptor {
        foreground_dim: foreground.len(),
        values,
    }
}

/// Everything retrieval and verification need from one scan.
pub fn describe_scan(
    scan: &SemanticScan,
    graph: &SemanticGraph,
    classes: &ClassMap,
    graph_config: &GraphConfig,
    bev_config: &BevConfig,
) -> (ScanDescriptor, BackgroundBev) {
    let bev = background_descriptor(scan, classes, bev_config);
    let fg = foreground_descriptor(graph, graph_config, classes);
    (fuse(&fg, &bev.ring_key()), bev)
}

pub fn descriptor_dim(classes: &ClassMap, graph_config: &GraphConfig, bev: &BevConfig) -> usize {
    graph_config.local_dim(classes)
        + classes.foreground().len()
        + bev.rings * classes.background().len()
}

const DESCRIPTOR_MAGIC: &[u8; 4] = b"SDSC";
const DESCRIPTOR_VERSION: u16 = 1;

/// Header of a descriptor file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DescriptorHeader {
    pub rings: u32,
    pub sectors: u32,
    pub classes: u32,
    pub dim: u32,
}

/// Writes `(scan_id, descriptor)` records as little-endian `u64` ids
/// followed by `dim` `f32` values each, after a fixed header.
pub fn encode_descriptors<'a>(
    header: DescriptorHeader,
    entries: impl ExactSizeIterator<Item = (u64, &'a [f64])>,
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DESCRIPTOR_MAGIC);
    out.write_u16::<LittleEndian>(DESCRIPTOR_VERSION).unwrap();
    for v in [header.rings, header.sectors, header.classes, header.dim] {
        out.write_u32::<LittleEndian>(v).unwrap();
    }
    out.write_u32::<LittleEndian>(entries.len() as u32).unwrap();
    for (id, values) in entries {
        assert_eq!(values.len(), header.dim as usize);
        out.write_u64::<LittleEndian>(id).unwrap();
        for &v in values {
            out.write_f32::<LittleEndian>(v as f32).unwrap();
        }
    }
    out
}

/// `(scan id, descriptor)` rows of a descriptor record.
pub type DescriptorRows = Vec<(u64, Vec<f64>)>;

pub fn decode_descriptors(bytes: &[u8]) -> Result<(DescriptorHeader, DescriptorRows)> {
    let bad = |what: &str| Error::Record(format!("descriptor record: {what}"));
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != DESCRIPTOR_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u16::<LittleEndian>().map_err(|_| bad("truncated"))?;
    if version != DESCRIPTOR_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let mut h = [0u32; 5];
    for v in h.iter_mut() {
        *v = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated"))?;
    }
    let header = DescriptorHeader {
        rings: h[0],
        sectors: h[1],
        classes: h[2],
        dim: h[3],
    };
    let mut entries = Vec::with_capacity((h[4] as usize).min(1 << 20));
    for _ in 0..h[4] {
        let id = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated"))?;
        let values = (0..header.dim)
            .map(|_| r.read_f32::<LittleEndian>().map(f64::from))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|_| bad("truncated"))?;
        entries.push((id, values));
    }
    if r.position() as usize != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((header, entries))
}
