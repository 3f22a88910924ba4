//! Class-incremental metric learning without stored exemplars.
//!
//! A convolutional embedding network is trained task by task with a triplet
//! loss and classified with nearest class means. Forgetting is limited by
//! distilling a frozen copy of the previous model into the current one on
//! images synthesized by a small adversarially trained generator. The
//! distillation loss matches normalized intermediate feature maps and
//! penalizes off-diagonal embedding covariance.

pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod generator;
pub mod metric;
pub mod nn;
pub mod trainer;

pub use error::{Error, Result};

/// All computation runs on the host CPU.
pub(crate) const DEVICE: candle_core::Device = candle_core::Device::Cpu;
