//! Shallow latent-to-image decoder that synthesizes stand-ins for past
//! data. It is trained only adversarially: each step pushes its samples
//! towards inputs where the student and the frozen teacher disagree most.

use candle_core::{Tensor, D};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ImageShape, Normalization};
use crate::distill::{embedding_distance_raw, value};
use crate::error::{Error, Result};
use crate::metric::EmbeddingBackbone;
use crate::nn::{ConvTranspose2d, Optimizer, ParamSet};
use crate::DEVICE;

pub const LATENT_DIM: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorArch {
    pub latent_dim: usize,
    /// Channels after the first and second transposed convolutions.
    pub hidden: [usize; 2],
    pub output: ImageShape,
}

impl GeneratorArch {
    pub fn new(output: ImageShape) -> Self {
        Self {
            latent_dim: LATENT_DIM,
            hidden: [64, 32],
            output,
        }
    }
}

/// Standard-normal latent codes, `(n, latent_dim)`.
#[derive(Debug, Clone)]
pub struct LatentBatch {
    pub z: Tensor,
}

impl LatentBatch {
    pub fn len(&self) -> usize {
        self.z.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn sample_latent(n: usize, latent_dim: usize, rng: &mut ChaCha8Rng) -> Result<LatentBatch> {
    if n < 1 {
        return Err(Error::Sampling("latent batch needs n ≥ 1".into()));
    }
    let values: Vec<f32> = (0..n * latent_dim)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Ok(LatentBatch {
        z: Tensor::from_vec(values, (n, latent_dim), &DEVICE)?,
    })
}

/// Three transposed convolutions from a `1×1` latent to the image size,
/// followed by a sigmoid mapped onto each channel's normalized pixel range.
#[derive(Debug, Clone)]
pub struct ReplayGenerator {
    arch: GeneratorArch,
    params: ParamSet,
    layers: [ConvTranspose2d; 3],
    /// Per-channel lower bound and width of the output range, `(1, c, 1, 1)`.
    low: Tensor,
    span: Tensor,
    normalization: Normalization,
}

impl ReplayGenerator {
    pub fn new(arch: GeneratorArch, normalization: &Normalization, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let out = arch.output;
        if out.height % 4 != 0 || out.width % 4 != 0 || out.height < 4 || out.width < 4 {
            return Err(Error::Config(format!(
                "generator output {}x{} must be a positive multiple of 4",
                out.height, out.width
            )));
        }
        if normalization.mean.len() != out.channels {
            return Err(Error::Shape("normalization does not match channels".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let [h1, h2] = arch.hidden;
        let k0 = (out.height / 4, out.width / 4);
        let layers = [
            ConvTranspose2d::new(&mut params, "deconv1", arch.latent_dim, h1, k0, 1, 0, &mut rng)?,
            ConvTranspose2d::new(&mut params, "deconv2", h1, h2, (4, 4), 2, 1, &mut rng)?,
            ConvTranspose2d::new(&mut params, "deconv3", h2, out.channels, (4, 4), 2, 1, &mut rng)?,
        ];
        let low: Vec<f32> = (0..out.channels).map(|c| normalization.normalize_value(c, 0.0)).collect();
        let span: Vec<f32> = (0..out.channels)
            .map(|c| normalization.normalize_value(c, 1.0) - normalization.normalize_value(c, 0.0))
            .collect();
        Ok(Self {
            low: Tensor::from_vec(low, (1, out.channels, 1, 1), &DEVICE)?,
            span: Tensor::from_vec(span, (1, out.channels, 1, 1), &DEVICE)?,
            arch,
            params,
            layers,
            normalization: normalization.clone(),
        })
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    /// Trainable copy with parameters cast to `dtype`.
    pub fn to_dtype(&self, dtype: candle_core::DType) -> Result<Self> {
        Ok(Self {
            params: self.params.to_dtype(dtype)?,
            ..self.clone()
        })
    }

    /// Normalization whose `[0, 1]` image range the outputs span.
    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Inclusive per-channel output bounds.
    pub fn bounds(&self) -> Result<Vec<(f32, f32)>> {
        let lo = self.low.flatten_all()?.to_vec1::<f32>()?;
        let sp = self.span.flatten_all()?.to_vec1::<f32>()?;
        Ok(lo.iter().zip(&sp).map(|(l, s)| (*l, l + s)).collect())
    }

    /// Synthetic images `(n, c, h, w)`; differentiable in the generator
    /// parameters.
    pub fn generate(&self, z: &LatentBatch) -> Result<Tensor> {
        let (n, dim) = z.z.dims2()?;
        if dim != self.arch.latent_dim {
            return Err(Error::Shape(format!(
                "latent dimension {dim}, generator expects {}",
                self.arch.latent_dim
            )));
        }
        let dtype = self.params.dtype();
        let mut h = z.z.to_dtype(dtype)?.reshape((n, dim, 1, 1))?;
        h = self.layers[0].forward(&self.params, &h)?.relu()?;
        h = self.layers[1].forward(&self.params, &h)?.relu()?;
        h = self.layers[2].forward(&self.params, &h)?;
        // sigmoid(x) = (tanh(x/2) + 1) / 2
        let unit = h.affine(0.5, 0.0)?.tanh()?.affine(0.5, 0.5)?;
        let out = unit
            .broadcast_mul(&self.span.to_dtype(dtype)?)?
            .broadcast_add(&self.low.to_dtype(dtype)?)?;
        debug_assert_eq!(out.dim(D::Minus1)?, self.arch.output.width);
        Ok(out)
    }
}

/// One adversarial update of the generator.
///
/// Computes `L_G = −D_E(student(x_g), teacher(x_g))` with `x_g = G(z)` and
/// applies `opt` to the generator parameters only. Returns the pre-update
/// loss.
pub fn generator_step(
    generator: &ReplayGenerator,
    opt: &mut dyn Optimizer,
    student: &EmbeddingBackbone,
    teacher: &EmbeddingBackbone,
    z: &LatentBatch,
) -> Result<f64> {
    let loss = generator_loss(generator, student, teacher, z)?;
    let l = value(&loss)?;
    if !l.is_finite() {
        return Err(Error::NonFinite(format!("generator loss {l}")));
    }
    let grads = loss.backward()?;
    opt.step(&generator.params, &grads)?;
    Ok(l)
}

/// `L_G` as a differentiable scalar.
pub fn generator_loss(
    generator: &ReplayGenerator,
    student: &EmbeddingBackbone,
    teacher: &EmbeddingBackbone,
    z: &LatentBatch,
) -> Result<Tensor> {
    let x = generator.generate(z)?;
    let s = student.forward(&x)?.embedding;
    let t = teacher.forward(&x)?.embedding;
    Ok(embedding_distance_raw(&s, &t)?.neg()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn gen(shape: ImageShape) -> ReplayGenerator {
        let norm = Normalization {
            mean: vec![0.5; shape.channels],
            std: vec![0.25; shape.channels],
        };
        ReplayGenerator::new(GeneratorArch::new(shape), &norm, 3).unwrap()
    }

    #[test]
    fn output_shape_and_range() {
        let g = gen(ImageShape::new(3, 16, 16));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = sample_latent(16, LATENT_DIM, &mut rng).unwrap();
        let x = g.generate(&z).unwrap();
        assert_eq!(x.dims(), &[16, 3, 16, 16]);
        let v = x.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|p| p.is_finite() && *p >= -2.0 && *p <= 2.0));
        let again = g.generate(&z).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn latent_shapes_and_determinism() {
        let a = sample_latent(1, LATENT_DIM, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.z.dims(), &[1, 100]);
        let b = sample_latent(16, LATENT_DIM, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let c = sample_latent(16, LATENT_DIM, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(b.z.to_vec2::<f32>().unwrap(), c.z.to_vec2::<f32>().unwrap());
        assert!(sample_latent(0, LATENT_DIM, &mut ChaCha8Rng::seed_from_u64(4)).is_err());
    }

    #[test]
    fn rejects_bad_geometry() {
        let norm = Normalization::identity(1);
        assert!(ReplayGenerator::new(GeneratorArch::new(ImageShape::new(1, 10, 10)), &norm, 0).is_err());
        let g = gen(ImageShape::new(1, 8, 8));
        let z = LatentBatch {
            z: Tensor::zeros((2, 7), candle_core::DType::F32, &DEVICE).unwrap(),
        };
        assert!(matches!(g.generate(&z), Err(Error::Shape(_))));
    }
}
