use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the training and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty centroid store")]
    EmptyStore,

    #[error("centroid for class {0} is already frozen")]
    CentroidExists(u32),

    #[error("missing centroid for class {0}")]
    MissingCentroid(u32),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("task order violation: expected task {expected}, got {got}")]
    TaskOrder { expected: usize, got: usize },

    #[error("missing teacher for task {0}")]
    MissingTeacher(usize),

    #[error("checkpoint schema version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("incomplete accuracy matrix: {0}")]
    IncompleteMatrix(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("serialization error: {0}")]
    Serde(String),

    #[error("plot error: {0}")]
    Plot(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
