use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::dataset::{ImageShape, RawDataset, RawSplit};
use crate::error::{Error, Result};

/// Procedural fixture: every class is a smooth random prototype image and
/// samples are noisy, jittered copies of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobsConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Gaussian bumps per channel in each prototype.
    pub bumps: usize,
    /// Per-pixel noise standard deviation.
    pub noise: f32,
    /// Global brightness jitter standard deviation.
    pub jitter: f32,
    pub seed: u64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            train_per_class: 200,
            test_per_class: 250,
            channels: 3,
            height: 16,
            width: 16,
            bumps: 3,
            noise: 0.15,
            jitter: 0.05,
            seed: 0,
        }
    }
}

fn prototype(cfg: &BlobsConfig, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let (h, w) = (cfg.height as f32, cfg.width as f32);
    let mut img = Vec::with_capacity(cfg.channels * cfg.height * cfg.width);
    for _ in 0..cfg.channels {
        let base: f32 = rng.random_range(0.15..0.45);
        let bumps: Vec<(f32, f32, f32, f32)> = (0..cfg.bumps)
            .map(|_| {
                (
                    rng.random_range(0.0..h),
                    rng.random_range(0.0..w),
                    rng.random_range(0.12..0.3) * h.max(w),
                    rng.random_range(-0.4..0.6),
                )
            })
            .collect();
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                let mut v = base;
                for &(cy, cx, s, a) in &bumps {
                    let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
                    v += a * (-d2 / (2.0 * s * s)).exp();
                }
                img.push(v.clamp(0.0, 1.0));
            }
        }
    }
    img
}

pub fn synthetic_blobs(cfg: &BlobsConfig) -> Result<RawDataset> {
    if cfg.classes < 1 || cfg.channels < 1 || cfg.height < 1 || cfg.width < 1 {
        return Err(Error::Config("synthetic-blobs needs positive sizes".into()));
    }
    if cfg.train_per_class == 0 {
        return Err(Error::Config("synthetic-blobs needs training samples".into()));
    }
    let shape = ImageShape::new(cfg.channels, cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let protos: Vec<Vec<f32>> = (0..cfg.classes).map(|_| prototype(cfg, &mut rng)).collect();
    let pixel_noise = Normal::new(0.0f32, cfg.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let shift = Normal::new(0.0f32, cfg.jitter.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;

    let mut next_id = 0u64;
    let mut make = |per_class: usize, rng: &mut ChaCha8Rng| {
        let mut split = RawSplit::default();
        for _ in 0..per_class {
            for (c, proto) in protos.iter().enumerate() {
                let s = shift.sample(rng);
                let img: Vec<f32> = proto
                    .iter()
                    .map(|&p| (p + s + pixel_noise.sample(rng)).clamp(0.0, 1.0))
                    .collect();
                split.push(&img, c as u32, next_id);
                next_id += 1;
            }
        }
        split
    };
    let train = make(cfg.train_per_class, &mut rng);
    let test = make(cfg.test_per_class, &mut rng);
    Ok(RawDataset {
        name: "synthetic-blobs".into(),
        shape,
        class_names: (0..cfg.classes).map(|c| format!("blob{c}")).collect(),
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let cfg = BlobsConfig {
            train_per_class: 5,
            test_per_class: 3,
            ..Default::default()
        };
        let a = synthetic_blobs(&cfg).unwrap();
        let b = synthetic_blobs(&cfg).unwrap();
        assert_eq!(a.train.pixels, b.train.pixels);
        assert_eq!(a.train.len(), 20);
        assert_eq!(a.test.len(), 12);
        assert!(a.train.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        let mut ids: Vec<u64> = a.train.ids.iter().chain(&a.test.ids).copied().collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 32);
    }
}
