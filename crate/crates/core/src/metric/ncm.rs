use ndarray::ArrayView2;

use super::centroids::CentroidStore;
use crate::error::{Error, Result};

/// Nearest-class-mean prediction under Euclidean distance over every stored
/// centroid. Ties resolve to the lowest class id.
pub fn ncm_classify(z: ArrayView2<f32>, store: &CentroidStore) -> Result<Vec<u32>> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    if store.dim() != Some(z.ncols()) {
        return Err(Error::Shape(format!(
            "embeddings of dimension {} against centroids of dimension {:?}",
            z.ncols(),
            store.dim()
        )));
    }
    let centroids: Vec<(u32, &[f32])> = store.iter().map(|(c, v)| (c, v.mean.as_slice())).collect();
    Ok(z.rows()
        .into_iter()
        .map(|row| {
            let mut best = (centroids[0].0, f64::INFINITY);
            for &(class_id, mean) in &centroids {
                let d: f64 = row
                    .iter()
                    .zip(mean)
                    .map(|(a, b)| {
                        let t = *a as f64 - *b as f64;
                        t * t
                    })
                    .sum();
                // ascending class order + strict comparison keeps the lowest id on ties
                if d < best.1 {
                    best = (class_id, d);
                }
            }
            best.0
        })
        .collect())
}

/// Fraction of `predicted` equal to `truth`.
pub fn accuracy(predicted: &[u32], truth: &[u32]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}
