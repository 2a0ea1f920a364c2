use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed scan file {path} at byte offset {offset}: {reason}")]
    ScanFormat {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("label error in {path}: {reason}")]
    Labels { path: PathBuf, reason: String },

    #[error("pose parse error in {path} line {line}: {reason}")]
    PoseParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("eigendecomposition of a {size}x{size} adjacency matrix did not converge")]
    EigenNoConvergence { size: usize },

    #[error("descriptor dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("scan id {id} does not follow the last inserted id {last}")]
    NonIncreasingScanId { id: usize, last: usize },

    #[error("insufficient matches: need at least {needed}, have {available}")]
    InsufficientMatches { needed: usize, available: usize },

    #[error("malformed binary record: {0}")]
    Record(String),

    #[error("malformed text record at line {line}: {reason}")]
    TextRecord { line: usize, reason: String },

    #[error("metric precondition violated: {0}")]
    Metrics(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
