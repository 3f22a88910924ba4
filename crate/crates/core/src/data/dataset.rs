use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel-first image geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

/// Which half of a dataset a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Test,
}

/// Unnormalized samples as produced by an adapter, pixels in `[0, 1]`.
#[derive(Debug, Clone, Default)]
pub struct RawSplit {
    pub pixels: Vec<f32>,
    pub labels: Vec<u32>,
    /// Stable identity of every sample, unique across both splits.
    pub ids: Vec<u64>,
}

impl RawSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, pixels: &[f32], label: u32, id: u64) {
        self.pixels.extend_from_slice(pixels);
        self.labels.push(label);
        self.ids.push(id);
    }
}

#[derive(Debug, Clone)]
pub struct RawDataset {
    pub name: String,
    pub shape: ImageShape,
    pub class_names: Vec<String>,
    pub train: RawSplit,
    pub test: RawSplit,
}

/// Per-channel statistics of the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Computes channel mean and standard deviation over a pixel buffer laid
    /// out as `(n, c, h, w)`.
    pub fn fit(pixels: &[f32], shape: ImageShape) -> Self {
        let plane = shape.height * shape.width;
        let per_image = shape.numel();
        let n = if per_image == 0 { 0 } else { pixels.len() / per_image };
        let mut mean = vec![0.0f64; shape.channels];
        let mut sq = vec![0.0f64; shape.channels];
        for img in pixels.chunks_exact(per_image) {
            for (c, chan) in img.chunks_exact(plane).enumerate() {
                for &p in chan {
                    mean[c] += p as f64;
                    sq[c] += (p as f64) * (p as f64);
                }
            }
        }
        let count = (n * plane).max(1) as f64;
        let mut out_mean = Vec::with_capacity(shape.channels);
        let mut out_std = Vec::with_capacity(shape.channels);
        for c in 0..shape.channels {
            let m = mean[c] / count;
            let var = (sq[c] / count - m * m).max(0.0);
            out_mean.push(m as f32);
            // constant channels keep unit scale
            out_std.push(if var > 1e-12 { var.sqrt() as f32 } else { 1.0 });
        }
        Self {
            mean: out_mean,
            std: out_std,
        }
    }

    pub fn apply(&self, pixels: &mut [f32], shape: ImageShape) {
        let plane = shape.height * shape.width;
        for img in pixels.chunks_exact_mut(shape.numel()) {
            for (c, chan) in img.chunks_exact_mut(plane).enumerate() {
                let (m, s) = (self.mean[c], self.std[c]);
                for p in chan {
                    *p = (*p - m) / s;
                }
            }
        }
    }

    /// Normalized value of a raw pixel in `[0, 1]` for channel `c`.
    pub fn normalize_value(&self, c: usize, raw: f32) -> f32 {
        (raw - self.mean[c]) / self.std[c]
    }
}

/// Normalized samples of one split.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub images: Vec<f32>,
    pub labels: Vec<u32>,
    pub ids: Vec<u64>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A fully loaded, normalized dataset. Read-only after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub shape: ImageShape,
    pub class_names: BTreeMap<u32, String>,
    pub normalization: Normalization,
    pub train: SplitData,
    pub test: SplitData,
}

impl Dataset {
    /// Normalizes a raw dataset with statistics of its training split.
    pub fn from_raw(raw: RawDataset) -> Result<Self> {
        let n = raw.shape.numel();
        for (kind, split) in [("train", &raw.train), ("test", &raw.test)] {
            if split.pixels.len() != split.len() * n || split.ids.len() != split.len() {
                return Err(Error::Dataset(format!(
                    "{kind} split of `{}` has inconsistent buffer sizes",
                    raw.name
                )));
            }
            if let Some(bad) = split
                .labels
                .iter()
                .find(|&&l| l as usize >= raw.class_names.len())
            {
                return Err(Error::Dataset(format!(
                    "{kind} label {bad} outside the {} known classes",
                    raw.class_names.len()
                )));
            }
            if split.pixels.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite(format!("{kind} pixels of `{}`", raw.name)));
            }
        }
        let normalization = Normalization::fit(&raw.train.pixels, raw.shape);
        let mut train = raw.train;
        let mut test = raw.test;
        normalization.apply(&mut train.pixels, raw.shape);
        normalization.apply(&mut test.pixels, raw.shape);
        Ok(Self {
            name: raw.name,
            shape: raw.shape,
            class_names: raw
                .class_names
                .into_iter()
                .enumerate()
                .map(|(i, n)| (i as u32, n))
                .collect(),
            normalization,
            train: SplitData {
                images: train.pixels,
                labels: train.labels,
                ids: train.ids,
            },
            test: SplitData {
                images: test.pixels,
                labels: test.labels,
                ids: test.ids,
            },
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self, kind: SplitKind) -> &SplitData {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Test => &self.test,
        }
    }

    /// Normalized pixels of sample `index` in `kind`.
    pub fn image(&self, kind: SplitKind, index: usize) -> &[f32] {
        let n = self.shape.numel();
        &self.split(kind).images[index * n..(index + 1) * n]
    }

    /// Bounds of the normalized pixel range per channel, `(lo, hi)`.
    pub fn pixel_bounds(&self) -> Vec<(f32, f32)> {
        (0..self.shape.channels)
            .map(|c| {
                (
                    self.normalization.normalize_value(c, 0.0),
                    self.normalization.normalize_value(c, 1.0),
                )
            })
            .collect()
    }
}
