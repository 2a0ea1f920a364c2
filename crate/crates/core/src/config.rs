use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::DEFAULT_MIN_CLUSTER_SIZE;
use crate::descriptor::BevConfig;
use crate::error::{Error, Result};
use crate::graph::GraphConfig;
use crate::refinement::RefinementConfig;
use crate::verification::VerificationConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub min_cluster_size: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            min_cluster_size: DEFAULT_MIN_CLUSTER_SIZE,
        }
    }
}

/// How a query picks among several candidates that pass verification.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidatePolicy {
    /// First accepted candidate in ascending retrieval distance.
    #[default]
    First,
    /// Accepted candidate with the highest graph similarity.
    BestGraph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub top_n: usize,
    /// Number of most recent scans excluded from the search.
    pub exclusion_window: usize,
    /// Admit every `keyframe_stride`-th scan to the database.
    pub keyframe_stride: usize,
    pub policy: CandidatePolicy,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            top_n: 10,
            exclusion_window: 300,
            keyframe_stride: 1,
            policy: CandidatePolicy::First,
        }
    }
}

/// Every tunable of the pipeline. Missing keys in a config file take their
/// default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub clustering: ClusteringConfig,
    pub graph: GraphConfig,
    pub bev: BevConfig,
    pub retrieval: RetrievalConfig,
    pub verification: VerificationConfig,
    pub refinement: RefinementConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        self.bev.validate()?;
        self.verification.validate()?;
        self.refinement.validate()?;
        if self.retrieval.top_n == 0 || self.retrieval.keyframe_stride == 0 {
            return Err(Error::Config(
                "top_n and keyframe_stride must be ≥ 1".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.verification.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let c = PipelineConfig::default();
        assert_eq!(c.graph.d_max, 60.0);
        assert_eq!(c.graph.eigen_k, 30);
        assert_eq!(c.verification.graph_threshold, 0.58);
        assert_eq!(c.verification.background_threshold, 0.7);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_is_lossless() {
        let mut c = PipelineConfig::default();
        c.verification.inlier_threshold = 0.123456789;
        c.retrieval.policy = CandidatePolicy::BestGraph;
        let back = PipelineConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = PipelineConfig::from_toml_str("[graph]\nd_max = 40.0\n").unwrap();
        assert_eq!(c.graph.d_max, 40.0);
        assert_eq!(c.graph.eigen_k, 30);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(PipelineConfig::from_toml_str("[verification]\ngraph_threshold = 1.5\n").is_err());
    }
}
