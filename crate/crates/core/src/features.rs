use crate::clustering::{extract_instances, Instance};
use crate::config::PipelineConfig;
use crate::descriptor::{describe_scan, BackgroundBev, ScanDescriptor};
use crate::error::Result;
use crate::graph::SemanticGraph;
use crate::pose::Point3;
use crate::refinement::{plane_cloud, PlaneCloud};
use crate::scan_io::{ClassMap, SemanticScan};

/// Per-scan products shared by retrieval, verification and refinement.
///
/// `instances[i]` is the instance behind `graph.nodes[i]`.
#[derive(Clone, Debug)]
pub struct ScanFeatures {
    pub scan: SemanticScan,
    pub instances: Vec<Instance>,
    pub graph: SemanticGraph,
    pub bev: BackgroundBev,
    pub descriptor: ScanDescriptor,
    /// Downsampled background points with normals for plane refinement.
    pub planes: PlaneCloud,
}

impl ScanFeatures {
    pub fn extract(
        scan: SemanticScan,
        classes: &ClassMap,
        config: &PipelineConfig,
    ) -> Result<Self> {
        let instances = extract_instances(&scan, classes, config.clustering.min_cluster_size);
        let graph = SemanticGraph::with_descriptors(&instances, classes, &config.graph)?;
        debug_assert_eq!(graph.node_count(), instances.len());
        let (descriptor, bev) = describe_scan(&scan, &graph, classes, &config.graph, &config.bev);
        let background: Vec<Point3> = scan
            .points_of(&classes.background_set())
            .map(|(_, p)| *p)
            .collect();
        let planes = plane_cloud(&background, &config.refinement);
        Ok(Self {
            scan,
            instances,
            graph,
            bev,
            descriptor,
            planes,
        })
    }

    pub fn instance_points(&self, node: usize) -> Vec<Point3> {
        self.instances[node].points(&self.scan).collect()
    }

    pub fn background_points(&self, classes: &ClassMap) -> Vec<Point3> {
        let bg = classes.background_set();
        self.scan.points_of(&bg).map(|(_, p)| *p).collect()
    }
}
