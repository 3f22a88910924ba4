//! Shared helpers for the integration tests: independent brute-force
//! reference implementations and small fixtures.
#![allow(dead_code)]

pub mod fixtures;
pub mod gradcheck;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_matrix(r: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| r.random_range(-scale..scale)).collect())
        .collect()
}

pub fn tensor2(rows: &[Vec<f64>], dtype: DType) -> Tensor {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Tensor::from_vec(flat, (n, d), &Device::Cpu).unwrap().to_dtype(dtype).unwrap()
}

pub fn tensor_nd(values: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_vec(values.to_vec(), shape, &Device::Cpu).unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub fn flat(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// `|a − b| ≤ tol` or relative error below `tol`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol || rel_err(a, b) <= tol
}

// ---- reference implementations -------------------------------------------

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Batch-hard triplets by exhaustive search over every `(p, n)` pair of an
/// anchor: the pair maximizing `D(a,p) − D(a,n)`, first in lexicographic
/// order on ties.
pub fn mine_oracle(z: &[Vec<f64>], labels: &[u32]) -> Vec<(usize, usize, usize)> {
    let n = z.len();
    let mut out = Vec::new();
    for a in 0..n {
        let mut best: Option<(f64, usize, usize)> = None;
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for q in 0..n {
                if labels[q] == labels[a] {
                    continue;
                }
                let v = sq_dist(&z[a], &z[p]) - sq_dist(&z[a], &z[q]);
                if best.is_none_or(|(b, _, _)| v > b) {
                    best = Some((v, p, q));
                }
            }
        }
        if let Some((_, p, q)) = best {
            out.push((a, p, q));
        }
    }
    out
}

pub fn triplet_oracle(z: &[Vec<f64>], triplets: &[(usize, usize, usize)], margin: f64) -> f64 {
    if triplets.is_empty() {
        return 0.0;
    }
    let total: f64 = triplets
        .iter()
        .map(|&(a, p, q)| (sq_dist(&z[a], &z[p]) - sq_dist(&z[a], &z[q]) + margin).max(0.0))
        .sum();
    total / triplets.len() as f64
}

pub fn covariance_oracle(z: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = z.len();
    let d = z[0].len();
    let mean: Vec<f64> = (0..d).map(|j| z.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; d]; d];
    for row in z {
        for l in 0..d {
            for i in 0..d {
                c[l][i] += (row[l] - mean[l]) * (row[i] - mean[i]);
            }
        }
    }
    for r in c.iter_mut() {
        for v in r.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    c
}

pub fn penalty_oracle(z: &[Vec<f64>]) -> f64 {
    let c = covariance_oracle(z);
    let d = c.len();
    let mut s = 0.0;
    for l in 0..d {
        for i in 0..d {
            if l != i {
                s += c[l][i] * c[l][i];
            }
        }
    }
    s / d as f64
}

/// Feature maps given as `[layer][sample] -> flattened values`.
pub fn fam_oracle(teacher: &[Vec<Vec<f64>>], student: &[Vec<Vec<f64>>]) -> f64 {
    let unit = |v: &[f64]| -> Vec<f64> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt() + 1e-8;
        v.iter().map(|x| x / norm).collect()
    };
    let mut total = 0.0;
    for (tl, sl) in teacher.iter().zip(student) {
        let mut layer = 0.0;
        for (t, s) in tl.iter().zip(sl) {
            layer += sq_dist(&unit(t), &unit(s)).sqrt();
        }
        total += layer / tl.len() as f64;
    }
    total
}

pub fn distance_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| sq_dist(x, y).sqrt()).sum::<f64>() / a.len() as f64
}

/// Nearest centroid by exhaustive search, lowest class id on ties.
pub fn ncm_oracle(z: &[Vec<f64>], centroids: &[(u32, Vec<f64>)]) -> Vec<u32> {
    z.iter()
        .map(|row| {
            let mut ranked: Vec<(f64, u32)> =
                centroids.iter().map(|(c, m)| (sq_dist(row, m), *c)).collect();
            ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            ranked[0].1
        })
        .collect()
}

/// Central finite difference of `f` at `x` along every coordinate.
pub fn numeric_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        g.push((up - down) / (2.0 * h));
    }
    g
}

/// Relative error between two gradient vectors, `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn grad_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}
