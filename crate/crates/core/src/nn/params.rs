use candle_core::{DType, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::DEVICE;

#[derive(Debug, Clone)]
struct Param {
    name: String,
    tensor: Tensor,
    /// Present only for trainable parameters.
    var: Option<Var>,
}

/// Ordered, named parameter tensors of one model.
///
/// A trainable set backs every tensor with a [`Var`] so gradients reach it;
/// a frozen set holds plain tensors that autograd never tracks.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

/// Host copy of a parameter set, used for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    pub entries: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let var = Var::from_tensor(&value)?;
        self.params.push(Param {
            name: name.into(),
            tensor: var.as_tensor().clone(),
            var: Some(var),
        });
        Ok(self.params.len() - 1)
    }

    /// Registers a uniformly initialized trainable parameter.
    pub fn push_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f32,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize> {
        let n: usize = shape.iter().product();
        let values: Vec<f32> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.push(name, Tensor::from_vec(values, shape, &DEVICE)?)
    }

    pub fn push_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<usize> {
        self.push(name, Tensor::zeros(shape, DType::F32, &DEVICE)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, index: usize) -> &Tensor {
        &self.params[index].tensor
    }

    pub fn name(&self, index: usize) -> &str {
        &self.params[index].name
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.params.iter().map(|p| &p.tensor)
    }

    pub fn is_trainable(&self) -> bool {
        self.params.iter().all(|p| p.var.is_some()) && !self.params.is_empty()
    }

    /// Trainable variables in registration order; empty for a frozen set.
    pub fn vars(&self) -> Vec<&Var> {
        self.params.iter().filter_map(|p| p.var.as_ref()).collect()
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.elem_count()).sum()
    }

    pub fn dtype(&self) -> DType {
        self.params.first().map(|p| p.tensor.dtype()).unwrap_or(DType::F32)
    }

    /// Deep copy with autograd disabled.
    pub fn freeze(&self) -> Result<ParamSet> {
        let params = self
            .params
            .iter()
            .map(|p| {
                Ok(Param {
                    name: p.name.clone(),
                    tensor: p.tensor.detach().copy()?,
                    var: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamSet { params })
    }

    /// Deep copy as fresh trainable variables.
    pub fn trainable_copy(&self) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for p in &self.params {
            out.push(p.name.clone(), p.tensor.detach().copy()?)?;
        }
        Ok(out)
    }

    /// Same parameters converted to `dtype`, keeping trainability.
    pub fn to_dtype(&self, dtype: DType) -> Result<ParamSet> {
        let trainable = self.is_trainable();
        let mut out = ParamSet::new();
        for p in &self.params {
            let t = p.tensor.detach().to_dtype(dtype)?.copy()?;
            if trainable {
                out.push(p.name.clone(), t)?;
            } else {
                out.params.push(Param {
                    name: p.name.clone(),
                    tensor: t,
                    var: None,
                });
            }
        }
        Ok(out)
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for d in p.tensor.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            match p.tensor.dtype() {
                DType::F64 => {
                    for v in p.tensor.flatten_all()?.to_vec1::<f64>()? {
                        h.update(v.to_le_bytes());
                    }
                }
                _ => {
                    for v in p.tensor.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()? {
                        h.update(v.to_le_bytes());
                    }
                }
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn to_state(&self) -> Result<ParamState> {
        let entries = self
            .params
            .iter()
            .map(|p| {
                Ok(ParamEntry {
                    name: p.name.clone(),
                    shape: p.tensor.dims().to_vec(),
                    values: p.tensor.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamState { entries })
    }

    /// Overwrites every parameter with the values in `state`; names and
    /// shapes must match exactly.
    pub fn load_state(&mut self, state: &ParamState) -> Result<()> {
        if state.entries.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "state has {} parameters, model has {}",
                state.entries.len(),
                self.params.len()
            )));
        }
        for (p, e) in self.params.iter_mut().zip(&state.entries) {
            if p.name != e.name || p.tensor.dims() != e.shape.as_slice() {
                return Err(Error::Shape(format!(
                    "parameter {} {:?} does not match state entry {} {:?}",
                    p.name,
                    p.tensor.dims(),
                    e.name,
                    e.shape
                )));
            }
            let value = Tensor::from_vec(e.values.clone(), e.shape.as_slice(), &DEVICE)?
                .to_dtype(p.tensor.dtype())?;
            match &p.var {
                Some(var) => var.set(&value)?,
                None => p.tensor = value,
            }
        }
        Ok(())
    }

    /// Parameter-wise bitwise equality.
    pub fn same_values(&self, other: &ParamSet) -> Result<bool> {
        Ok(self.to_state()? == other.to_state()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample() -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamSet::new();
        p.push_uniform("w", &[2, 3], 1.0, &mut rng).unwrap();
        p.push_zeros("b", &[2]).unwrap();
        p
    }

    #[test]
    fn freeze_is_a_deep_untracked_copy() {
        let p = sample();
        let f = p.freeze().unwrap();
        assert!(!f.is_trainable());
        assert!(f.vars().is_empty());
        assert_eq!(p.checksum().unwrap(), f.checksum().unwrap());
        p.vars()[0]
            .set(&Tensor::ones((2, 3), DType::F32, &DEVICE).unwrap())
            .unwrap();
        assert_ne!(p.checksum().unwrap(), f.checksum().unwrap());
    }

    #[test]
    fn state_round_trip() {
        let p = sample();
        let state = p.to_state().unwrap();
        let mut q = sample();
        q.vars()[0]
            .set(&Tensor::zeros((2, 3), DType::F32, &DEVICE).unwrap())
            .unwrap();
        q.load_state(&state).unwrap();
        assert!(p.same_values(&q).unwrap());
        let mut bad = state.clone();
        bad.entries[0].name = "x".into();
        assert!(q.load_state(&bad).is_err());
    }
}
