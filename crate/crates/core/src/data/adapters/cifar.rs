use std::fs;
use std::path::{Path, PathBuf};

use crate::data::dataset::{ImageShape, RawDataset, RawSplit};
use crate::error::{Error, Result};

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

const RECORD: usize = 1 + 3 * 32 * 32;

fn batches_dir(root: &Path) -> PathBuf {
    let nested = root.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

fn read_batch(path: &Path, split: &mut RawSplit, next_id: &mut u64) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() || bytes.len() % RECORD != 0 {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("size {} is not a multiple of {RECORD}", bytes.len()),
        });
    }
    for rec in bytes.chunks_exact(RECORD) {
        let label = rec[0] as u32;
        if label >= 10 {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                reason: format!("label {label}"),
            });
        }
        let pixels: Vec<f32> = rec[1..].iter().map(|&b| b as f32 / 255.0).collect();
        split.push(&pixels, label, *next_id);
        *next_id += 1;
    }
    Ok(())
}

/// Reads the CIFAR-10 binary distribution (`data_batch_{1..5}.bin`,
/// `test_batch.bin`) from `root` or `root/cifar-10-batches-bin`.
pub fn load_cifar10(root: &Path) -> Result<RawDataset> {
    let dir = batches_dir(root);
    let mut train = RawSplit::default();
    let mut test = RawSplit::default();
    let mut next_id = 0u64;
    for i in 1..=5 {
        read_batch(&dir.join(format!("data_batch_{i}.bin")), &mut train, &mut next_id)?;
    }
    read_batch(&dir.join("test_batch.bin"), &mut test, &mut next_id)?;
    Ok(RawDataset {
        name: "cifar10".into(),
        shape: ImageShape::new(3, 32, 32),
        class_names: CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect(),
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_binary_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![3u8];
        rec.extend(std::iter::repeat(255u8).take(RECORD - 1));
        for i in 1..=5 {
            fs::write(dir.path().join(format!("data_batch_{i}.bin")), &rec).unwrap();
        }
        fs::write(dir.path().join("test_batch.bin"), &rec).unwrap();
        let raw = load_cifar10(dir.path()).unwrap();
        assert_eq!(raw.train.len(), 5);
        assert_eq!(raw.test.len(), 1);
        assert_eq!(raw.train.labels[0], 3);
        assert_eq!(raw.train.pixels[0], 1.0);
    }

    #[test]
    fn truncated_batch_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("data_batch_1.bin"), [1u8, 2, 3]).unwrap();
        assert!(matches!(load_cifar10(dir.path()), Err(Error::Corrupt { .. })));
    }
}
