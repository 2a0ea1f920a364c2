//! Exact nearest-neighbour search over keyframe descriptors.

use std::cmp::Ordering;
use std::path::Path;

use crate::descriptor::{decode_descriptors, encode_descriptors, DescriptorHeader};
use crate::error::{Error, Result};
use crate::pose::Pose;

#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeEntry {
    pub scan_id: usize,
    pub descriptor: Vec<f64>,
    pub pose: Option<Pose>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub scan_id: usize,
    pub distance: f64,
}

/// Flat, insertion-ordered descriptor store searched by linear scan.
#[derive(Clone, Debug)]
pub struct KeyframeIndex {
    dim: usize,
    ids: Vec<usize>,
    data: Vec<f64>,
    poses: Vec<Option<Pose>>,
}

impl KeyframeIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            poses: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn insert(&mut self, entry: KeyframeEntry) -> Result<()> {
        if entry.descriptor.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: entry.descriptor.len(),
            });
        }
        if let Some(&last) = self.ids.last() {
            if entry.scan_id <= last {
                return Err(Error::NonIncreasingScanId {
                    id: entry.scan_id,
                    last,
                });
            }
        }
        self.ids.push(entry.scan_id);
        self.data.extend_from_slice(&entry.descriptor);
        self.poses.push(entry.pose);
        Ok(())
    }

    pub fn descriptor(&self, slot: usize) -> &[f64] {
        &self.data[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn pose_of(&self, scan_id: usize) -> Option<Pose> {
        let slot = self.ids.binary_search(&scan_id).ok()?;
        self.poses[slot]
    }

    /// The `top_n` entries closest to `descriptor` among those with
    /// `scan_id + exclusion_window ≤ current_id`, ascending by distance,
    /// ties broken by smaller scan id.
    pub fn query(
        &self,
        descriptor: &[f64],
        current_id: usize,
        top_n: usize,
        exclusion_window: usize,
    ) -> Result<Vec<Neighbor>> {
        if descriptor.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: descriptor.len(),
            });
        }
        if top_n == 0 {
            return Ok(Vec::new());
        }
        let Some(limit) = current_id.checked_sub(exclusion_window) else {
            return Ok(Vec::new());
        };
        // ids are increasing, so the eligible entries form a prefix
        let eligible = self.ids.partition_point(|&id| id <= limit);
        let mut hits: Vec<Neighbor> = (0..eligible)
            .map(|slot| Neighbor {
                scan_id: self.ids[slot],
                distance: squared_distance(self.descriptor(slot), descriptor),
            })
            .collect();
        let order = |a: &Neighbor, b: &Neighbor| {
            a.distance
                .partial_cmp(&b.distance)
                .unwrap_or(Ordering::Equal)
                .then(a.scan_id.cmp(&b.scan_id))
        };
        if hits.len() > top_n {
            hits.select_nth_unstable_by(top_n - 1, order);
            hits.truncate(top_n);
        }
        hits.sort_unstable_by(order);
        for h in &mut hits {
            h.distance = h.distance.sqrt();
        }
        Ok(hits)
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = (usize, &[f64])> {
        self.ids
            .iter()
            .enumerate()
            .map(|(slot, &id)| (id, self.descriptor(slot)))
    }

    pub fn save(
        &self,
        path: impl AsRef<Path>,
        rings: u32,
        sectors: u32,
        classes: u32,
    ) -> Result<()> {
        let path = path.as_ref();
        let header = DescriptorHeader {
            rings,
            sectors,
            classes,
            dim: self.dim as u32,
        };
        let bytes = encode_descriptors(header, self.entries().map(|(id, d)| (id as u64, d)));
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(DescriptorHeader, Self)> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (header, entries) = decode_descriptors(&bytes)?;
        let mut index = Self::new(header.dim as usize);
        for (id, descriptor) in entries {
            index.insert(KeyframeEntry {
                scan_id: id as usize,
                descriptor,
                pose: None,
            })?;
        }
        Ok((header, index))
    }
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
