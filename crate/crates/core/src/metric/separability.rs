use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean within-class and between-class Euclidean distances of a labeled
/// embedding set. A large `ratio` means well separated classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub mean_intra: f64,
    pub mean_inter: f64,
    /// `mean_inter / mean_intra`; `+∞` when all within-class distances vanish.
    pub ratio: f64,
}

pub fn separability_report(z: ArrayView2<f32>, labels: &[u32]) -> Result<SeparabilityReport> {
    if z.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} rows for {} labels", z.nrows(), labels.len())));
    }
    let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
    for l in labels {
        *sizes.entry(*l).or_default() += 1;
    }
    if sizes.len() < 2 {
        return Err(Error::Degenerate("separability needs at least two classes".into()));
    }
    if let Some((c, _)) = sizes.iter().find(|(_, n)| **n < 2) {
        return Err(Error::Degenerate(format!("class {c} has fewer than two samples")));
    }
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0f64, 0u64, 0.0f64, 0u64);
    for i in 0..z.nrows() {
        for j in (i + 1)..z.nrows() {
            let d = z
                .row(i)
                .iter()
                .zip(z.row(j).iter())
                .map(|(a, b)| {
                    let t = *a as f64 - *b as f64;
                    t * t
                })
                .sum::<f64>()
                .sqrt();
            if labels[i] == labels[j] {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    let mean_intra = intra / n_intra as f64;
    let mean_inter = inter / n_inter as f64;
    let ratio = if mean_intra > 0.0 {
        mean_inter / mean_intra
    } else {
        f64::INFINITY
    };
    Ok(SeparabilityReport {
        mean_intra,
        mean_inter,
        ratio,
    })
}
