use candle_core::{DType, Tensor};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Batch-local indices of an (anchor, positive, negative) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Squared Euclidean distances between all rows, accumulated in f64.
pub fn pairwise_sq_dists(z: ArrayView2<f32>) -> Array2<f64> {
    let n = z.nrows();
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = z
                .row(i)
                .iter()
                .zip(z.row(j).iter())
                .map(|(a, b)| {
                    let t = *a as f64 - *b as f64;
                    t * t
                })
                .sum();
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    out
}

/// Batch-hard mining: for every anchor with at least one positive and one
/// negative, pairs the farthest same-class sample with the nearest
/// other-class sample. Ties go to the lowest index.
pub fn mine_triplets(z: ArrayView2<f32>, labels: &[u32]) -> Result<Vec<Triplet>> {
    if z.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} embeddings for {} labels",
            z.nrows(),
            labels.len()
        )));
    }
    let dist = pairwise_sq_dists(z);
    let n = labels.len();
    let mut out = Vec::new();
    for a in 0..n {
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = dist[[a, j]];
            if labels[j] == labels[a] {
                if hardest_pos.is_none_or(|(_, best)| d > best) {
                    hardest_pos = Some((j, d));
                }
            } else if hardest_neg.is_none_or(|(_, best)| d < best) {
                hardest_neg = Some((j, d));
            }
        }
        if let (Some((p, _)), Some((q, _))) = (hardest_pos, hardest_neg) {
            out.push(Triplet {
                anchor: a,
                positive: p,
                negative: q,
            });
        }
    }
    Ok(out)
}

/// Mean hinge over triplets. `active` is false when there were no triplets,
/// in which case `value` is a constant zero with no gradient path.
#[derive(Debug, Clone)]
pub struct TripletLoss {
    pub value: Tensor,
    pub active: bool,
    pub num_triplets: usize,
}

fn index_tensor(idx: Vec<u32>, device: &candle_core::Device) -> Result<Tensor> {
    let n = idx.len();
    Ok(Tensor::from_vec(idx, n, device)?)
}

/// `mean(max(0, D(a,p) − D(a,n) + margin))` with `D` the squared Euclidean
/// distance between rows of `z`.
pub fn triplet_loss(z: &Tensor, triplets: &[Triplet], margin: f64) -> Result<TripletLoss> {
    if !(margin > 0.0) {
        return Err(Error::Config(format!("triplet margin {margin} must be positive")));
    }
    let (n, _) = z.dims2()?;
    if triplets.is_empty() {
        return Ok(TripletLoss {
            value: Tensor::zeros((), z.dtype(), z.device())?,
            active: false,
            num_triplets: 0,
        });
    }
    if let Some(t) = triplets
        .iter()
        .find(|t| t.anchor.max(t.positive).max(t.negative) >= n)
    {
        return Err(Error::Shape(format!("triplet {t:?} outside batch of {n}")));
    }
    let dev = z.device();
    let a = z.index_select(&index_tensor(triplets.iter().map(|t| t.anchor as u32).collect(), dev)?, 0)?;
    let p = z.index_select(&index_tensor(triplets.iter().map(|t| t.positive as u32).collect(), dev)?, 0)?;
    let q = z.index_select(&index_tensor(triplets.iter().map(|t| t.negative as u32).collect(), dev)?, 0)?;
    let d_ap = (&a - &p)?.sqr()?.sum(1)?;
    let d_an = (&a - &q)?.sqr()?.sum(1)?;
    let hinge = ((d_ap - d_an)? + margin)?.relu()?;
    Ok(TripletLoss {
        value: hinge.mean_all()?,
        active: true,
        num_triplets: triplets.len(),
    })
}

/// Mean squared distance of every row of `z` to `center` `(d,)`. Used as the
/// current-task loss when a task has a single class and no negatives exist.
pub fn centroid_pull_loss(z: &Tensor, center: &Tensor) -> Result<Tensor> {
    let center = center.to_dtype(z.dtype())?.detach().unsqueeze(0)?;
    Ok(z.broadcast_sub(&center)?.sqr()?.sum(1)?.mean_all()?)
}

/// Scalar value of a 0-d tensor as f64.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
