//! Foreground semantic graph and per-node descriptors.
//!
//! Nodes are foreground instances; an edge joins every pair of nodes whose
//! centers are closer than `d_max`. Each node carries a descriptor made of a
//! local part (histogram of incident edges by label pair and length) and a
//! global part (absolute entries of its row in the leading eigenvectors of
//! the adjacency matrix).

use std::io::{Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::clustering::{BoxSize, Instance};
use crate::error::{Error, Result};
use crate::pose::{Point3, Pose};
use crate::scan_io::{ClassId, ClassMap};

/// Eigenvalues closer than this are treated as one degenerate block.
pub const EIGEN_TIE_TOLERANCE: f64 = 1e-6;
/// Eigenvalues at most this large in magnitude span the null space of `A`;
/// their eigenvectors carry no adjacency information and are zeroed.
pub const NULL_EIGENVALUE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    /// Edge threshold on center distance, meters.
    pub d_max: f64,
    /// Number of leading eigenvectors in the global embedding.
    pub eigen_k: usize,
    pub length_bins: usize,
    /// Width of one length bin, meters.
    pub bin_width: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            d_max: 60.0,
            eigen_k: 30,
            length_bins: 12,
            bin_width: 5.0,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_max > 0.0) {
            return Err(Error::Config("d_max must be positive".into()));
        }
        if self.length_bins == 0 || !(self.bin_width > 0.0) {
            return Err(Error::Config("length bins must be nonempty".into()));
        }
        if (self.length_bins as f64) * self.bin_width < self.d_max {
            return Err(Error::Config(format!(
                "{} bins of {} m do not cover d_max = {} m",
                self.length_bins, self.bin_width, self.d_max
            )));
        }
        Ok(())
    }

    pub fn length_bin(&self, d: f64) -> usize {
        ((d / self.bin_width).floor().max(0.0) as usize).min(self.length_bins - 1)
    }

    pub fn local_dim(&self, classes: &ClassMap) -> usize {
        classes.edge_category_count() * self.length_bins
    }

    pub fn descriptor_dim(&self, classes: &ClassMap) -> usize {
        self.local_dim(classes) + self.eigen_k
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphNode {
    pub center: Point3,
    pub size: BoxSize,
    pub label: ClassId,
    /// `f_l ⧺ f_g`; empty until [`SemanticGraph::compute_descriptors`] runs.
    pub descriptor: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    /// Unordered label pair, stored with the smaller class id first.
    pub labels: (ClassId, ClassId),
    /// Index of `labels` in the class map's edge-category order.
    pub category: usize,
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    /// N×N, symmetric, zero diagonal, entries 0 or 1.
    pub adjacency: DMatrix<f64>,
}

impl SemanticGraph {
    /// Builds nodes from instances whose label is a foreground class of
    /// `classes`; other instances are skipped.
    pub fn build(instances: &[Instance], classes: &ClassMap, d_max: f64) -> Self {
        let nodes: Vec<GraphNode> = instances
            .iter()
            .filter(|inst| classes.foreground_index(inst.label).is_some())
            .map(|inst| GraphNode {
                center: inst.center,
                size: inst.size,
                label: inst.label,
                descriptor: Vec::new(),
            })
            .collect();
        Self::from_nodes(nodes, classes, d_max)
    }

    pub fn from_nodes(nodes: Vec<GraphNode>, classes: &ClassMap, d_max: f64) -> Self {
        assert!(d_max > 0.0, "d_max must be positive");
        let n = nodes.len();
        let mut edges = Vec::new();
        let mut adjacency = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let length = (nodes[i].center - nodes[j].center).norm();
                if length < d_max {
                    let (a, b) = (nodes[i].label, nodes[j].label);
                    let category = classes
                        .edge_category(a, b)
                        .expect("graph nodes carry foreground labels");
                    edges.push(GraphEdge {
                        i,
                        j,
                        labels: (a.min(b), a.max(b)),
                        category,
                        length,
                    });
                    adjacency[(i, j)] = 1.0;
                    adjacency[(j, i)] = 1.0;
                }
            }
        }
        Self {
            nodes,
            edges,
            adjacency,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency
            .row(node)
            .iter()
            .filter(|&&v| v != 0.0)
            .count()
    }

    /// Histogram of the edges incident to `node` over
    /// (label category × length bin), category-major.
    pub fn local_descriptor(
        &self,
        node: usize,
        config: &GraphConfig,
        classes: &ClassMap,
    ) -> Vec<f64> {
        let mut hist = vec![0.0; config.local_dim(classes)];
        for e in self.edges.iter().filter(|e| e.i == node || e.j == node) {
            hist[e.category * config.length_bins + config.length_bin(e.length)] += 1.0;
        }
        hist
    }

    /// Histogram of all edges of the graph, same layout as
    /// [`Self::local_descriptor`].
    pub fn edge_histogram(&self, config: &GraphConfig, classes: &ClassMap) -> Vec<f64> {
        let mut hist = vec![0.0; config.local_dim(classes)];
        for e in &self.edges {
            hist[e.category * config.length_bins + config.length_bin(e.length)] += 1.0;
        }
        hist
    }

    /// Eigendecomposition of the adjacency matrix, eigenvalues descending.
    pub fn spectrum(&self) -> Result<Spectrum> {
        Spectrum::of(&self.adjacency)
    }

    /// Per-node `|Q[i, 0..k]|`, zero-padded when N < k.
    pub fn global_embeddings(&self, k: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.node_count();
        if n == 0 {
            return Ok(Vec::new());
        }
        let spectrum = self.spectrum()?;
        let cols = k.min(n);
        Ok((0..n)
            .map(|i| {
                let mut row = vec![0.0; k];
                for (c, slot) in row.iter_mut().enumerate().take(cols) {
                    if spectrum.values[c].abs() > NULL_EIGENVALUE_TOLERANCE {
                        *slot = spectrum.vectors[(i, c)].abs();
                    }
                }
                row
            })
            .collect())
    }

    /// Fills every node's descriptor with `f_l ⧺ f_g`.
    pub fn compute_descriptors(&mut self, config: &GraphConfig, classes: &ClassMap) -> Result<()> {
        let global = self.global_embeddings(config.eigen_k)?;
        for (i, g) in global.into_iter().enumerate() {
            let mut f = self.local_descriptor(i, config, classes);
            f.extend(g);
            self.nodes[i].descriptor = f;
        }
        Ok(())
    }

    /// Clusters-to-descriptors convenience: builds the graph and fills
    /// descriptors.
    pub fn with_descriptors(
        instances: &[Instance],
        classes: &ClassMap,
        config: &GraphConfig,
    ) -> Result<Self> {
        let mut g = Self::build(instances, classes, config.d_max);
        g.compute_descriptors(config, classes)?;
        Ok(g)
    }

    pub fn centers(&self) -> Vec<Point3> {
        self.nodes.iter().map(|n| n.center).collect()
    }

    /// Node count per foreground class, in class-map order.
    pub fn label_counts(&self, classes: &ClassMap) -> Vec<f64> {
        let mut counts = vec![0.0; classes.foreground().len()];
        for n in &self.nodes {
            if let Some(i) = classes.foreground_index(n.label) {
                counts[i] += 1.0;
            }
        }
        counts
    }

    /// Copy with every center mapped through `pose`; edges and descriptors
    /// are kept since they depend only on pairwise distances.
    pub fn transformed(&self, pose: &Pose) -> Self {
        let mut g = self.clone();
        for n in &mut g.nodes {
            n.center = pose.transform_point(&n.center);
        }
        g
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: DVector<f64>,
    /// Eigenvectors as columns, aligned with `values`.
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    /// Decomposes each connected component of `a` separately (the matrix
    /// is block diagonal under that grouping), then sorts all eigenpairs.
    pub fn of(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let mut values: Vec<f64> = Vec::with_capacity(n);
        let mut vectors: Vec<DVector<f64>> = Vec::with_capacity(n);
        for comp in components(a) {
            if comp.len() == 1 {
                values.push(a[(comp[0], comp[0])]);
                let mut v = DVector::zeros(n);
                v[comp[0]] = 1.0;
                vectors.push(v);
                continue;
            }
            let sub = DMatrix::from_fn(comp.len(), comp.len(), |i, j| a[(comp[i], comp[j])]);
            let eig = SymmetricEigen::try_new(sub, f64::EPSILON, 10_000)
                .filter(|e| {
                    e.eigenvalues
                        .iter()
                        .chain(e.eigenvectors.iter())
                        .all(|v| v.is_finite())
                })
                .ok_or(Error::EigenNoConvergence { size: comp.len() })?;
            for c in 0..comp.len() {
                values.push(eig.eigenvalues[c]);
                let mut v = DVector::zeros(n);
                for (k, &i) in comp.iter().enumerate() {
                    v[i] = eig.eigenvectors[(k, c)];
                }
                vectors.push(v);
            }
        }
        let l1: Vec<f64> = vectors.iter().map(|v| v.abs().sum()).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| values[y].total_cmp(&values[x]));
        // within degenerate blocks, order by descending column l1 norm
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n
                && (values[order[end - 1]] - values[order[end]]).abs() < EIGEN_TIE_TOLERANCE
            {
                end += 1;
            }
            order[start..end].sort_by(|&x, &y| l1[y].total_cmp(&l1[x]));
            start = end;
        }
        Ok(Spectrum {
            values: DVector::from_iterator(n, order.iter().map(|&c| values[c])),
            vectors: DMatrix::from_columns(
                &order
                    .iter()
                    .map(|&c| vectors[c].clone())
                    .collect::<Vec<_>>(),
            ),
        })
    }

    /// `Q Λ Qᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.vectors * DMatrix::from_diagonal(&self.values) * self.vectors.transpose()
    }

    /// True when no two eigenvalues are within [`EIGEN_TIE_TOLERANCE`].
    pub fn is_simple(&self) -> bool {
        self.values
            .as_slice()
            .windows(2)
            .all(|w| (w[0] - w[1]).abs() >= EIGEN_TIE_TOLERANCE)
    }
}

/// Connected components of the nonzero pattern of `a`, each sorted, ordered
/// by smallest index.
fn components(a: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = a.nrows();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut k = 0;
        while k < comp.len() {
            let i = comp[k];
            for j in 0..n {
                if !seen[j] && (a[(i, j)] != 0.0 || a[(j, i)] != 0.0) {
                    seen[j] = true;
                    comp.push(j);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

const GRAPH_MAGIC: &[u8; 4] = b"SGRF";
const GRAPH_VERSION: u16 = 1;

/// Versioned little-endian record: header, node array, edge array.
pub fn encode_graph(graph: &SemanticGraph) -> Vec<u8> {
    let dim = graph.nodes.first().map_or(0, |n| n.descriptor.len());
    let mut out = Vec::new();
    out.extend_from_slice(GRAPH_MAGIC);
    out.write_u16::<LittleEndian>(GRAPH_VERSION).unwrap();
    out.write_u32::<LittleEndian>(graph.nodes.len() as u32)
        .unwrap();
    out.write_u32::<LittleEndian>(dim as u32).unwrap();
    for n in &graph.nodes {
        out.write_u32::<LittleEndian>(n.label).unwrap();
        for v in n.center.iter().chain(n.size.as_array().iter()) {
            out.write_f64::<LittleEndian>(*v).unwrap();
        }
        for i in 0..dim {
            out.write_f64::<LittleEndian>(n.descriptor.get(i).copied().unwrap_or(0.0))
                .unwrap();
        }
    }
    out.write_u32::<LittleEndian>(graph.edges.len() as u32)
        .unwrap();
    for e in &graph.edges {
        out.write_u32::<LittleEndian>(e.i as u32).unwrap();
        out.write_u32::<LittleEndian>(e.j as u32).unwrap();
        out.write_u32::<LittleEndian>(e.category as u32).unwrap();
        out.write_f64::<LittleEndian>(e.length).unwrap();
    }
    out
}

pub fn decode_graph(bytes: &[u8]) -> Result<SemanticGraph> {
    let bad = |what: &str| Error::Record(format!("graph record: {what}"));
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != GRAPH_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u16::<LittleEndian>().map_err(|_| bad("truncated"))?;
    if version != GRAPH_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let rd_u32 = |r: &mut Cursor<&[u8]>| r.read_u32::<LittleEndian>().map_err(|_| bad("truncated"));
    let rd_f64 = |r: &mut Cursor<&[u8]>| r.read_f64::<LittleEndian>().map_err(|_| bad("truncated"));
    let n = rd_u32(&mut r)? as usize;
    let dim = rd_u32(&mut r)? as usize;
    let mut nodes = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let label = rd_u32(&mut r)?;
        let mut v = [0.0; 6];
        for x in v.iter_mut() {
            *x = rd_f64(&mut r)?;
        }
        let descriptor = (0..dim)
            .map(|_| rd_f64(&mut r))
            .collect::<Result<Vec<_>>>()?;
        nodes.push(GraphNode {
            center: Point3::new(v[0], v[1], v[2]),
            size: BoxSize {
                length: v[3],
                height: v[4],
                width: v[5],
            },
            label,
            descriptor,
        });
    }
    let m = rd_u32(&mut r)? as usize;
    let mut edges = Vec::with_capacity(m.min(1 << 20));
    let mut adjacency = DMatrix::zeros(n, n);
    for _ in 0..m {
        let i = rd_u32(&mut r)? as usize;
        let j = rd_u32(&mut r)? as usize;
        let category = rd_u32(&mut r)? as usize;
        let length = rd_f64(&mut r)?;
        if i >= n || j >= n || i == j {
            return Err(bad("edge endpoint out of range"));
        }
        let (a, b) = (nodes[i].label, nodes[j].label);
        adjacency[(i, j)] = 1.0;
        adjacency[(j, i)] = 1.0;
        edges.push(GraphEdge {
            i,
            j,
            labels: (a.min(b), a.max(b)),
            category,
            length,
        });
    }
    if (r.position() as usize) != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(SemanticGraph {
        nodes,
        edges,
        adjacency,
    })
}
