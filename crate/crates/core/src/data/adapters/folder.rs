use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::resize_to_unit;
use crate::data::dataset::{ImageShape, RawDataset, RawSplit};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FolderConfig {
    /// Class directories under the root; class id = position in this list.
    pub class_dirs: Vec<String>,
    pub test_fraction: f64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for FolderConfig {
    fn default() -> Self {
        Self {
            class_dirs: Vec::new(),
            test_fraction: 0.2,
            channels: 3,
            height: 32,
            width: 32,
            seed: 0,
        }
    }
}

/// Result of scanning an image folder.
#[derive(Debug, Clone)]
pub struct FolderDataset {
    pub raw: RawDataset,
    /// Files that could not be decoded and were left out.
    pub skipped: Vec<PathBuf>,
}

fn decode(path: &Path, target: ImageShape) -> Option<Vec<f32>> {
    let img = image::open(path).ok()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (data, c) = if target.channels == 1 {
        (img.to_luma8().into_raw(), 1)
    } else {
        (img.to_rgb8().into_raw(), 3)
    };
    resize_to_unit(&data, c, h, w, target).ok()
}

/// Loads `root/<class_dir>/*` images, one class per directory, and splits
/// each class into train/test by `test_fraction` under `seed`.
pub fn image_folder_adapter(root: &Path, name: &str, cfg: &FolderConfig) -> Result<FolderDataset> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("missing directory {}", root.display())));
    }
    if cfg.class_dirs.is_empty() {
        return Err(Error::Config("image folder needs at least one class directory".into()));
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(Error::Config(format!("test_fraction {} outside [0, 1)", cfg.test_fraction)));
    }
    let target = ImageShape::new(cfg.channels, cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train = RawSplit::default();
    let mut test = RawSplit::default();
    let mut skipped = Vec::new();
    let mut next_id = 0u64;

    for (class_id, dir_name) in cfg.class_dirs.iter().enumerate() {
        let dir = root.join(dir_name);
        let entries = fs::read_dir(&dir)
            .map_err(|_| Error::Dataset(format!("missing directory {}", dir.display())))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut decoded = Vec::with_capacity(files.len());
        for f in files {
            match decode(&f, target) {
                Some(px) => decoded.push(px),
                None => {
                    log::warn!("skipping unreadable image {}", f.display());
                    skipped.push(f);
                }
            }
        }
        if decoded.is_empty() {
            return Err(Error::Dataset(format!(
                "class directory {} has no readable images",
                dir.display()
            )));
        }
        let mut order: Vec<usize> = (0..decoded.len()).collect();
        order.shuffle(&mut rng);
        let n_test = ((decoded.len() as f64) * cfg.test_fraction).round() as usize;
        let n_test = n_test.min(decoded.len() - 1);
        for (rank, &i) in order.iter().enumerate() {
            let split = if rank < n_test { &mut test } else { &mut train };
            split.push(&decoded[i], class_id as u32, next_id + i as u64);
        }
        next_id += decoded.len() as u64;
    }

    Ok(FolderDataset {
        raw: RawDataset {
            name: name.to_string(),
            shape: target,
            class_names: cfg.class_dirs.clone(),
            train,
            test,
        },
        skipped,
    })
}
