//! Distillation losses between a frozen teacher and the trainable student,
//! all evaluated on the same synthetic batch.
//!
//! Teacher-side inputs are detached inside every function, so gradients only
//! ever reach the student.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard added to per-sample feature-map norms.
pub const NORM_EPS: f64 = 1e-8;

/// Squared norms below this are treated as zero when differentiating.
const SQ_FLOOR: f64 = 1e-24;

/// Euclidean norm from a squared norm, with a zero gradient at zero.
///
/// Computed as `s / sqrt(max(s, floor))`: equal to `sqrt(s)` for `s ≥ floor`
/// and avoiding the infinite slope of `sqrt` at the origin, which appears
/// whenever student and teacher agree exactly.
pub fn safe_norm(sq: &Tensor) -> Result<Tensor> {
    let denom = sq.maximum(SQ_FLOOR)?.sqrt()?;
    Ok((sq / denom)?)
}

/// How each feature map is turned into a vector before normalization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamVariant {
    /// The whole `(c, h, w)` map, flattened.
    #[default]
    Flattened,
    /// Channel-averaged squared activations, `(h, w)`.
    ChannelAttention,
}

fn map_vectors(a: &Tensor, variant: FamVariant) -> Result<Tensor> {
    let v = match variant {
        FamVariant::Flattened => a.flatten_from(1)?,
        FamVariant::ChannelAttention => a.sqr()?.mean(1)?.flatten_from(1)?,
    };
    Ok(v)
}

fn normalize_rows(v: &Tensor) -> Result<Tensor> {
    let norm = (safe_norm(&v.sqr()?.sum_keepdim(1)?)? + NORM_EPS)?;
    Ok(v.broadcast_div(&norm)?)
}

/// Sum over layers of the batch-mean distance between per-sample
/// L2-normalized teacher and student feature maps.
pub fn feature_attention_loss(teacher: &[Tensor], student: &[Tensor]) -> Result<Tensor> {
    feature_attention_loss_with(teacher, student, FamVariant::Flattened)
}

pub fn feature_attention_loss_with(
    teacher: &[Tensor],
    student: &[Tensor],
    variant: FamVariant,
) -> Result<Tensor> {
    if teacher.len() != student.len() || teacher.is_empty() {
        return Err(Error::Shape(format!(
            "{} teacher maps vs {} student maps",
            teacher.len(),
            student.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for (l, (t, s)) in teacher.iter().zip(student).enumerate() {
        if t.dims() != s.dims() {
            return Err(Error::Shape(format!(
                "layer {l}: teacher {:?} vs student {:?}",
                t.dims(),
                s.dims()
            )));
        }
        let t = normalize_rows(&map_vectors(&t.detach().to_dtype(s.dtype())?, variant)?)?;
        let s = normalize_rows(&map_vectors(s, variant)?)?;
        let per_sample = safe_norm(&(t - s)?.sqr()?.sum(1)?)?;
        let layer = per_sample.mean_all()?;
        total = Some(match total {
            Some(acc) => (acc + layer)?,
            None => layer,
        });
    }
    Ok(total.expect("at least one layer"))
}

fn centered(z: &Tensor) -> Result<(Tensor, usize, usize)> {
    let (n, d) = z.dims2()?;
    if n < 2 {
        return Err(Error::Degenerate(format!("covariance needs n ≥ 2 rows, got {n}")));
    }
    let zc = z.broadcast_sub(&z.mean_keepdim(0)?)?;
    Ok((zc, n, d))
}

/// Sample covariance `(1/(n−1)) Σ (z_i − m)(z_i − m)ᵀ`, shape `(d, d)`.
pub fn covariance_matrix(z: &Tensor) -> Result<Tensor> {
    let (zc, n, _) = centered(z)?;
    Ok((zc.t()?.matmul(&zc)? / (n as f64 - 1.0))?)
}

/// `(1/d) Σ_{l≠i} C(Z)_{l,i}²` with `d` the embedding width of `z`.
pub fn covariance_penalty(z: &Tensor) -> Result<Tensor> {
    let c = covariance_matrix(z)?;
    let d = c.dim(0)?;
    let off = Tensor::eye(d, c.dtype(), c.device())?.affine(-1.0, 1.0)?;
    Ok(((c.sqr()? * off)?.sum_all()? / d as f64)?)
}

/// Student and teacher embeddings of the same synthetic batch.
#[derive(Debug, Clone)]
pub struct EmbeddingPair {
    pub student: Tensor,
    pub teacher: Tensor,
}

impl EmbeddingPair {
    pub fn new(student: Tensor, teacher: Tensor) -> Result<Self> {
        if student.dims() != teacher.dims() || student.rank() != 2 {
            return Err(Error::Shape(format!(
                "student {:?} vs teacher {:?}",
                student.dims(),
                teacher.dims()
            )));
        }
        let teacher = teacher.detach().to_dtype(student.dtype())?;
        Ok(Self { student, teacher })
    }
}

/// `c(Z_student) + c(Z_teacher)`; the teacher term is a constant.
pub fn covariance_loss(pair: &EmbeddingPair) -> Result<Tensor> {
    let s = covariance_penalty(&pair.student)?;
    let t = covariance_penalty(&pair.teacher)?.detach();
    Ok((s + t)?)
}

/// Batch mean of row-wise Euclidean distances between student and teacher
/// embeddings.
pub fn embedding_distance(pair: &EmbeddingPair) -> Result<Tensor> {
    embedding_distance_raw(&pair.student, &pair.teacher)
}

/// Same as [`embedding_distance`] but lets gradients flow into both sides,
/// which the generator needs (it reaches the teacher through its input).
pub fn embedding_distance_raw(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() || a.rank() != 2 {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let sq = (a - b)?.sqr()?.sum(1)?;
    Ok(safe_norm(&sq)?.mean_all()?)
}

/// Which distillation terms drive the gradient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdTerms {
    #[default]
    Both,
    FamOnly,
    CovOnly,
}

/// Distillation loss with its components. `total` is the optimized
/// objective; `fam` and `cov` are always computed for logging.
#[derive(Debug, Clone)]
pub struct KdLoss {
    pub total: Tensor,
    pub fam: Tensor,
    pub cov: Tensor,
}

pub fn kd_loss(
    teacher_maps: &[Tensor],
    student_maps: &[Tensor],
    pair: &EmbeddingPair,
    terms: KdTerms,
    variant: FamVariant,
) -> Result<KdLoss> {
    let fam = feature_attention_loss_with(teacher_maps, student_maps, variant)?;
    let cov = covariance_loss(pair)?;
    let total = match terms {
        KdTerms::Both => (&fam + &cov)?,
        KdTerms::FamOnly => fam.clone(),
        KdTerms::CovOnly => cov.clone(),
    };
    let (fam, cov) = match terms {
        KdTerms::Both => (fam, cov),
        KdTerms::FamOnly => (fam, cov.detach()),
        KdTerms::CovOnly => (fam.detach(), cov),
    };
    Ok(KdLoss { total, fam, cov })
}

/// Value of a scalar tensor as f64.
pub fn value(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
