use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;
use crate::error::Result;

/// 2-D convolution whose weights live in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    weight: usize,
    bias: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// He-uniform initialized `out × in × k × k` kernel with zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        gain: f32,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = (c_in * kernel * kernel) as f32;
        let bound = gain * (6.0 / fan_in).sqrt();
        let weight = params.push_uniform(format!("{name}.weight"), &[c_out, c_in, kernel, kernel], bound, rng)?;
        let bias = params.push_zeros(format!("{name}.bias"), &[c_out])?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let w = params.get(self.weight);
        let b = params.get(self.bias);
        let y = x.conv2d(w, self.padding, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?)
    }
}

/// Transposed 2-D convolution with a rectangular kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTranspose2d {
    weight: usize,
    bias: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        // fan-in of a transposed conv: input channels reaching one output pixel
        let fan_in = (c_in * kernel.0 * kernel.1 / (stride * stride).max(1)).max(1) as f32;
        let bound = (6.0 / fan_in).sqrt();
        let weight = params.push_uniform(
            format!("{name}.weight"),
            &[c_in, c_out, kernel.0, kernel.1],
            bound,
            rng,
        )?;
        let bias = params.push_zeros(format!("{name}.bias"), &[c_out])?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let w = params.get(self.weight);
        let b = params.get(self.bias);
        let y = x.conv_transpose2d(w, self.padding, 0, self.stride, 1)?;
        Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?)
    }
}
