use candle_core::{DType, Tensor};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ImageShape, LabeledBatch, SampleView};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ParamSet};

/// Residual convolutional encoder layout. The classifier and fully
/// connected layers of a classification ResNet are absent: the embedding is
/// the global average of the last feature map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneArch {
    pub input: ImageShape,
    /// Channel width of each residual stage; stages after the first halve
    /// the spatial resolution.
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub embedding_dim: usize,
}

impl BackboneArch {
    /// ResNet-18 layout for 32×32 inputs (3×3 stem, no max-pool).
    pub fn resnet18(input: ImageShape) -> Self {
        Self {
            input,
            stage_widths: vec![64, 128, 256, 512],
            blocks_per_stage: 2,
            embedding_dim: 512,
        }
    }

    /// Two single-block stages and a 1×1 projection to 512 dimensions; sized
    /// for CPU experiments.
    pub fn tiny(input: ImageShape) -> Self {
        Self {
            input,
            stage_widths: vec![16, 32],
            blocks_per_stage: 1,
            embedding_dim: 512,
        }
    }

    pub fn preset(name: &str, input: ImageShape) -> Result<Self> {
        match name {
            "resnet18" => Ok(Self::resnet18(input)),
            "tiny" => Ok(Self::tiny(input)),
            other => Err(Error::Config(format!("unknown backbone preset `{other}`"))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return Err(Error::Config("backbone needs nonzero stage widths".into()));
        }
        if self.blocks_per_stage == 0 || self.embedding_dim == 0 || self.input.numel() == 0 {
            return Err(Error::Config("backbone sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

/// Embedding `(batch, d)` and the intermediate feature maps, in network order.
#[derive(Debug, Clone)]
pub struct BackboneOutput {
    pub embedding: Tensor,
    pub feature_maps: Vec<Tensor>,
}

/// The metric-learning encoder `f_θ`.
#[derive(Debug, Clone)]
pub struct EmbeddingBackbone {
    arch: BackboneArch,
    params: ParamSet,
    stem: Conv2d,
    blocks: Vec<Block>,
    head: Option<Conv2d>,
}

impl EmbeddingBackbone {
    pub fn new(arch: BackboneArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let w0 = arch.stage_widths[0];
        let stem = Conv2d::new(&mut params, "stem", arch.input.channels, w0, 3, 1, 1, 1.0, &mut rng)?;
        let mut blocks = Vec::new();
        let mut c_in = w0;
        for (s, &width) in arch.stage_widths.iter().enumerate() {
            for b in 0..arch.blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let name = format!("stage{s}.block{b}");
                let conv1 = Conv2d::new(&mut params, &format!("{name}.conv1"), c_in, width, 3, stride, 1, 1.0, &mut rng)?;
                // damped residual branch keeps activations bounded without normalization layers
                let conv2 = Conv2d::new(&mut params, &format!("{name}.conv2"), width, width, 3, 1, 1, 0.5, &mut rng)?;
                let shortcut = if stride != 1 || c_in != width {
                    Some(Conv2d::new(&mut params, &format!("{name}.shortcut"), c_in, width, 1, stride, 0, 1.0, &mut rng)?)
                } else {
                    None
                };
                blocks.push(Block { conv1, conv2, shortcut });
                c_in = width;
            }
        }
        let head = if c_in != arch.embedding_dim {
            Some(Conv2d::new(&mut params, "head", c_in, arch.embedding_dim, 1, 1, 0, 1.0, &mut rng)?)
        } else {
            None
        };
        Ok(Self {
            arch,
            params,
            stem,
            blocks,
            head,
        })
    }

    pub fn arch(&self) -> &BackboneArch {
        &self.arch
    }

    pub fn embedding_dim(&self) -> usize {
        self.arch.embedding_dim
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Number of tapped feature maps.
    pub fn num_taps(&self) -> usize {
        1 + self.blocks.len() + usize::from(self.head.is_some())
    }

    fn with_params(&self, params: ParamSet) -> Self {
        Self {
            params,
            ..self.clone()
        }
    }

    /// Immutable deep copy with gradients disabled.
    pub fn freeze(&self) -> Result<Self> {
        Ok(self.with_params(self.params.freeze()?))
    }

    /// Independent trainable deep copy.
    pub fn trainable_copy(&self) -> Result<Self> {
        Ok(self.with_params(self.params.trainable_copy()?))
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        Ok(self.with_params(self.params.to_dtype(dtype)?))
    }

    /// Raw forward pass on `(batch, c, h, w)` images.
    pub fn forward(&self, x: &Tensor) -> Result<BackboneOutput> {
        let mut maps = Vec::with_capacity(self.num_taps());
        let mut h = self.stem.forward(&self.params, x)?.relu()?;
        maps.push(h.clone());
        for block in &self.blocks {
            let y = block.conv1.forward(&self.params, &h)?.relu()?;
            let y = block.conv2.forward(&self.params, &y)?;
            let skip = match &block.shortcut {
                Some(s) => s.forward(&self.params, &h)?,
                None => h.clone(),
            };
            h = (y + skip)?.relu()?;
            maps.push(h.clone());
        }
        if let Some(head) = &self.head {
            h = head.forward(&self.params, &h)?.relu()?;
            maps.push(h.clone());
        }
        let embedding = h.mean((2, 3))?;
        Ok(BackboneOutput {
            embedding,
            feature_maps: maps,
        })
    }

    /// Checked forward pass: validates the input geometry and that the
    /// embedding is finite.
    pub fn embed(&self, batch: &LabeledBatch) -> Result<BackboneOutput> {
        self.embed_images(&batch.images)
    }

    pub fn embed_images(&self, images: &Tensor) -> Result<BackboneOutput> {
        let dims = images.dims();
        let want = self.arch.input;
        if dims.len() != 4 || dims[0] == 0 || (dims[1], dims[2], dims[3]) != want.dims() {
            return Err(Error::Shape(format!(
                "images {dims:?} do not match model input {:?}",
                want.dims()
            )));
        }
        let out = self.forward(&images.to_dtype(self.params.dtype())?)?;
        let finite = out
            .embedding
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("embedding (training diverged)".into()));
        }
        Ok(out)
    }

    /// Embeds a whole view in order, without tracking gradients.
    pub fn embed_view(&self, view: &SampleView, chunk: usize) -> Result<(Array2<f32>, Vec<u32>)> {
        let d = self.embedding_dim();
        let mut data = Vec::with_capacity(view.len() * d);
        let mut labels = Vec::with_capacity(view.len());
        for batch in view.chunks(chunk) {
            let batch = batch?;
            let z = self.embed(&batch)?.embedding.detach().to_dtype(DType::F32)?;
            data.extend(z.flatten_all()?.to_vec1::<f32>()?);
            labels.extend(batch.labels);
        }
        let n = labels.len();
        let z = Array2::from_shape_vec((n, d), data).map_err(|e| Error::Shape(e.to_string()))?;
        Ok((z, labels))
    }
}

/// Copies a `(n, d)` tensor to the host.
pub fn to_array(z: &Tensor) -> Result<Array2<f32>> {
    let (n, d) = z.dims2()?;
    let v = z.detach().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Array2::from_shape_vec((n, d), v).map_err(|e| Error::Shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::DEVICE;

    fn batch(n: usize) -> LabeledBatch {
        let x = Tensor::randn(0f32, 1.0, (n, 3, 8, 8), &DEVICE).unwrap();
        LabeledBatch::new(x, vec![0; n]).unwrap()
    }

    #[test]
    fn embedding_shapes() {
        let m = EmbeddingBackbone::new(BackboneArch::tiny(ImageShape::new(3, 8, 8)), 0).unwrap();
        let out = m.embed(&batch(16)).unwrap();
        assert_eq!(out.embedding.dims(), &[16, 512]);
        assert_eq!(out.feature_maps.len(), m.num_taps());
        assert_eq!(m.num_taps(), 4);
        let out = m.embed(&batch(1)).unwrap();
        assert_eq!(out.embedding.dims(), &[1, 512]);
    }

    #[test]
    fn deterministic_forward() {
        let m = EmbeddingBackbone::new(BackboneArch::tiny(ImageShape::new(3, 8, 8)), 0).unwrap();
        let b = batch(4);
        let a = m.embed(&b).unwrap().embedding.to_vec2::<f32>().unwrap();
        let c = m.embed(&b).unwrap().embedding.to_vec2::<f32>().unwrap();
        assert_eq!(a, c);
        let m2 = EmbeddingBackbone::new(BackboneArch::tiny(ImageShape::new(3, 8, 8)), 0).unwrap();
        assert_eq!(m.params().checksum().unwrap(), m2.params().checksum().unwrap());
    }

    #[test]
    fn rejects_wrong_geometry() {
        let m = EmbeddingBackbone::new(BackboneArch::tiny(ImageShape::new(1, 8, 8)), 0).unwrap();
        assert!(matches!(m.embed(&batch(2)), Err(Error::Shape(_))));
    }

    #[test]
    fn resnet18_layout_has_512_channel_last_stage() {
        let m = EmbeddingBackbone::new(BackboneArch::resnet18(ImageShape::new(3, 8, 8)), 0).unwrap();
        assert_eq!(m.num_taps(), 1 + 8);
        let out = m.embed(&batch(2)).unwrap();
        assert_eq!(out.embedding.dims(), &[2, 512]);
    }
}
