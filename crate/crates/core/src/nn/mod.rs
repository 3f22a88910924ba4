//! Minimal neural-network plumbing on top of candle tensors: named
//! parameter sets, convolution layers and optimizers.

mod layers;
mod optim;
mod params;

pub use layers::{Conv2d, ConvTranspose2d};
pub use optim::{Adam, AdamConfig, AdamState, Optimizer, Sgd};
pub use params::{ParamEntry, ParamSet, ParamState};
