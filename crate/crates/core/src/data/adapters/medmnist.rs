use std::fs::File;
use std::path::Path;

use ndarray::ArrayD;
use ndarray_npy::NpzReader;

use super::resize_to_unit;
use crate::data::dataset::{ImageShape, RawDataset, RawSplit};
use crate::error::{Error, Result};

pub const OCT_CLASSES: [&str; 4] = ["CNV", "DME", "Drusen", "Normal"];

pub const PATH_CLASSES: [&str; 9] = [
    "adipose",
    "background",
    "debris",
    "lymphocytes",
    "mucus",
    "smooth muscle",
    "normal colon mucosa",
    "cancer-associated stroma",
    "colorectal adenocarcinoma epithelium",
];

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_split(
    npz: &mut NpzReader<File>,
    path: &Path,
    prefix: &str,
    target: ImageShape,
    next_id: &mut u64,
) -> Result<RawSplit> {
    let images: ArrayD<u8> = npz
        .by_name(&format!("{prefix}_images"))
        .map_err(|e| corrupt(path, e.to_string()))?;
    let labels: ArrayD<u8> = npz
        .by_name(&format!("{prefix}_labels"))
        .map_err(|e| corrupt(path, e.to_string()))?;
    let dims = images.shape().to_vec();
    let (n, h, w, c) = match dims.as_slice() {
        [n, h, w] => (*n, *h, *w, 1),
        [n, h, w, c] => (*n, *h, *w, *c),
        other => return Err(corrupt(path, format!("image array shape {other:?}"))),
    };
    if labels.len() != n {
        return Err(corrupt(path, format!("{} labels for {n} images", labels.len())));
    }
    let flat: Vec<u8> = images.iter().copied().collect();
    let mut split = RawSplit::default();
    for (i, label) in labels.iter().enumerate() {
        let hwc = &flat[i * h * w * c..(i + 1) * h * w * c];
        let pixels = resize_to_unit(hwc, c, h, w, target)?;
        split.push(&pixels, *label as u32, *next_id);
        *next_id += 1;
    }
    Ok(split)
}

/// Reads a MedMNIST archive (`train_images`, `train_labels`, `test_images`,
/// `test_labels`) and resizes every image to `target`.
pub fn load_medmnist(
    path: &Path,
    name: &str,
    class_names: &[&str],
    target: ImageShape,
) -> Result<RawDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut npz = NpzReader::new(file).map_err(|e| corrupt(path, e.to_string()))?;
    let mut next_id = 0u64;
    let train = read_split(&mut npz, path, "train", target, &mut next_id)?;
    let test = read_split(&mut npz, path, "test", target, &mut next_id)?;
    Ok(RawDataset {
        name: name.to_string(),
        shape: target,
        class_names: class_names.iter().map(|s| s.to_string()).collect(),
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use ndarray_npy::NpzWriter;

    #[test]
    fn reads_and_resizes_grayscale_archive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("octmnist.npz");
        {
            let mut w = NpzWriter::new(File::create(&path).unwrap());
            let imgs = Array::from_elem((3, 28, 28), 128u8);
            let labels = Array::from_shape_vec((3, 1), vec![0u8, 3, 1]).unwrap();
            w.add_array("train_images", &imgs).unwrap();
            w.add_array("train_labels", &labels).unwrap();
            w.add_array("test_images", &Array::from_elem((1, 28, 28), 0u8)).unwrap();
            w.add_array("test_labels", &Array::from_elem((1, 1), 2u8)).unwrap();
            w.finish().unwrap();
        }
        let raw = load_medmnist(&path, "oct", &OCT_CLASSES, ImageShape::new(1, 32, 32)).unwrap();
        assert_eq!(raw.train.len(), 3);
        assert_eq!(raw.train.labels, vec![0, 3, 1]);
        assert_eq!(raw.train.pixels.len(), 3 * 32 * 32);
        assert!((raw.train.pixels[100] - 128.0 / 255.0).abs() < 1e-2);
        assert_eq!(raw.test.labels, vec![2]);
    }
}
