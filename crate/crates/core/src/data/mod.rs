//! Incremental-learning data model: datasets, task streams, batch sampling
//! and the access audit that proves past training data stays untouched.

pub mod adapters;
mod audit;
mod dataset;
mod sampler;
mod stream;

use std::sync::Arc;

pub use adapters::{DataSource, DATA_ROOT_ENV};
pub use audit::{AccessAudit, AccessRecord};
pub use dataset::{Dataset, ImageShape, Normalization, RawDataset, RawSplit, SplitData, SplitKind};
pub use sampler::{BatchSampler, LabeledBatch};
pub use stream::{
    build_task_stream, builtin_partition, SampleView, SplitProtocol, TaskSpec, TaskStream,
    KNOWN_DATASETS,
};

use crate::error::Result;

/// Loads and normalizes the dataset described by `source`.
pub fn load_dataset(source: &DataSource) -> Result<Arc<Dataset>> {
    Ok(Arc::new(Dataset::from_raw(source.load_raw()?)?))
}
