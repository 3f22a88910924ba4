//! Dataset adapters. Each produces a [`RawDataset`] with pixels in `[0, 1]`.

mod blobs;
mod cifar;
mod folder;
mod medmnist;

use std::path::PathBuf;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

pub use blobs::{synthetic_blobs, BlobsConfig};
pub use cifar::{load_cifar10, CIFAR10_CLASSES};
pub use folder::{image_folder_adapter, FolderConfig, FolderDataset};
pub use medmnist::{load_medmnist, OCT_CLASSES, PATH_CLASSES};

use super::dataset::{ImageShape, RawDataset};
use crate::error::{Error, Result};

/// Environment variable consulted when `data_root` is not configured.
pub const DATA_ROOT_ENV: &str = "REPLAYKD_DATA_ROOT";

/// Where and how to load a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSource {
    pub dataset: String,
    pub data_root: Option<PathBuf>,
    /// Side length OCT and PathMNIST images are resized to.
    pub medmnist_size: usize,
    pub blobs: BlobsConfig,
    pub folder: FolderConfig,
}

impl Default for DataSource {
    fn default() -> Self {
        Self {
            dataset: "synthetic-blobs".into(),
            data_root: None,
            medmnist_size: 32,
            blobs: BlobsConfig::default(),
            folder: FolderConfig::default(),
        }
    }
}

impl DataSource {
    pub fn root(&self) -> Result<PathBuf> {
        if let Some(r) = &self.data_root {
            return Ok(r.clone());
        }
        std::env::var_os(DATA_ROOT_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| {
                Error::Config(format!(
                    "dataset `{}` needs `data_root` or ${DATA_ROOT_ENV}",
                    self.dataset
                ))
            })
    }

    pub fn load_raw(&self) -> Result<RawDataset> {
        let size = self.medmnist_size;
        match self.dataset.as_str() {
            "synthetic-blobs" => synthetic_blobs(&self.blobs),
            "cifar10" => load_cifar10(&self.root()?),
            "oct" => load_medmnist(
                &self.root()?.join("octmnist.npz"),
                "oct",
                &OCT_CLASSES,
                ImageShape::new(1, size, size),
            ),
            "pathmnist" => load_medmnist(
                &self.root()?.join("pathmnist.npz"),
                "pathmnist",
                &PATH_CLASSES,
                ImageShape::new(3, size, size),
            ),
            "picai" | "image-folder" => {
                let loaded = image_folder_adapter(&self.root()?, &self.dataset, &self.folder)?;
                if !loaded.skipped.is_empty() {
                    log::warn!("{} unreadable images skipped", loaded.skipped.len());
                }
                Ok(loaded.raw)
            }
            other => Err(Error::UnknownDataset(other.to_string())),
        }
    }
}

/// Converts an interleaved `(h, w, c)` byte image into a channel-first float
/// image in `[0, 1]` of shape `target`.
pub(crate) fn resize_to_unit(
    hwc: &[u8],
    channels: usize,
    h: usize,
    w: usize,
    target: ImageShape,
) -> Result<Vec<f32>> {
    if hwc.len() != h * w * channels {
        return Err(Error::Shape(format!("{} bytes for {h}x{w}x{channels}", hwc.len())));
    }
    let (th, tw) = (target.height as u32, target.width as u32);
    let same = h as u32 == th && w as u32 == tw;
    // (h, w, c) bytes at target resolution, channel count unchanged
    let resized: Vec<u8> = match channels {
        1 => {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w as u32, h as u32, hwc.to_vec()).expect("sized");
            if same { buf.into_raw() } else { imageops::resize(&buf, tw, th, FilterType::Triangle).into_raw() }
        }
        3 => {
            let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w as u32, h as u32, hwc.to_vec()).expect("sized");
            if same { buf.into_raw() } else { imageops::resize(&buf, tw, th, FilterType::Triangle).into_raw() }
        }
        c => return Err(Error::Shape(format!("unsupported channel count {c}"))),
    };
    let plane = target.height * target.width;
    let mut out = vec![0.0f32; target.channels * plane];
    for p in 0..plane {
        let px = &resized[p * channels..(p + 1) * channels];
        for tc in 0..target.channels {
            let v = match (channels, target.channels) {
                (1, _) => px[0] as f32,
                (3, 1) => (px[0] as f32 + px[1] as f32 + px[2] as f32) / 3.0,
                _ => px[tc.min(channels - 1)] as f32,
            };
            out[tc * plane + p] = v / 255.0;
        }
    }
    Ok(out)
}
