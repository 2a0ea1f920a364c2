//! Loop-closure detection and registration for semantically labeled LiDAR
//! scans.
//!
//! Scans are reduced to a graph of foreground instances and a polar grid of
//! background classes. [`pipeline::SequenceProcessor`] runs retrieval,
//! verification and refinement online; [`pipeline::register_pair`] handles
//! a single pair.
//!
//! ```
//! use loopgraph::pipeline::register_pair;
//! use loopgraph::scan_io::ClassMap;
//! use loopgraph::synthetic::{random_pair, SceneSpec};
//! use loopgraph::PipelineConfig;
//!
//! let pair = random_pair(&SceneSpec::default(), 2, 3.0, Some(3.0), 80.0);
//! let result = register_pair(pair.scan_a, pair.scan_b, &ClassMap::default(), &PipelineConfig::default())?;
//! let (dr, dt) = result.estimate().unwrap().difference(&pair.ground_truth);
//! assert!(dt < 0.1 && dr < 0.01);
//! # Ok::<(), loopgraph::Error>(())
//! ```
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod config;
pub mod descriptor;
pub mod error;
pub mod features;
pub mod graph;
pub mod metrics;
pub mod pipeline;
pub mod pose;
pub mod refinement;
pub mod retrieval;
pub mod scan_io;
pub mod spatial;
pub mod synthetic;
pub mod verification;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use features::ScanFeatures;
pub use pose::Pose;

macro_rules! book_chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[cfg(doctest)]
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        )*
    };
}

book_chapters! {
    book_introduction => "introduction.md",
    book_scans => "scans.md",
    book_instances => "instances.md",
    book_graph => "graph.md",
    book_descriptor => "descriptor.md",
    book_retrieval => "retrieval.md",
    book_verification => "verification.md",
    book_refinement => "refinement.md",
    book_metrics => "metrics.md",
    book_synthetic => "synthetic.md",
    book_cli => "cli.md",
}
