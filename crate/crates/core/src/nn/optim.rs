use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::params::{ParamSet, ParamState};
use crate::error::{Error, Result};

/// Applies one update to the trainable tensors of a parameter set.
pub trait Optimizer {
    fn step(&mut self, params: &ParamSet, grads: &GradStore) -> Result<()>;
}

/// Plain gradient descent, `θ ← θ − lr·∇`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &ParamSet, grads: &GradStore) -> Result<()> {
        for var in params.vars() {
            if let Some(g) = grads.get(var.as_tensor()) {
                let next = (var.as_tensor().detach() - g.detach().affine(self.lr, 0.0)?)?;
                var.set(&next)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient before the moment updates.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Adam with coupled weight decay: the decay term is added to the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

/// Serializable Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: ParamState,
    pub second: ParamState,
}

fn moments_state(params: &ParamSet, moments: &[Tensor]) -> Result<ParamState> {
    let mut set = ParamSet::new();
    for (name, m) in params.names().zip(moments) {
        set.push(name.to_string(), m.copy()?)?;
    }
    set.freeze()?.to_state()
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", config.lr)));
        }
        let zeros = params
            .tensors()
            .map(|t| Ok(t.zeros_like()?.detach()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn to_state(&self, params: &ParamSet) -> Result<AdamState> {
        Ok(AdamState {
            config: self.config,
            step: self.step,
            first: moments_state(params, &self.first)?,
            second: moments_state(params, &self.second)?,
        })
    }

    pub fn from_state(state: &AdamState, params: &ParamSet) -> Result<Self> {
        let mut adam = Adam::new(state.config, params)?;
        adam.step = state.step;
        let load = |s: &ParamState| -> Result<Vec<Tensor>> {
            let mut set = params.freeze()?;
            set.load_state(s)?;
            Ok(set.tensors().cloned().collect())
        };
        adam.first = load(&state.first)?;
        adam.second = load(&state.second)?;
        Ok(adam)
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &ParamSet, grads: &GradStore) -> Result<()> {
        let vars = params.vars();
        if vars.len() != self.first.len() {
            return Err(Error::Shape("optimizer built for a different parameter set".into()));
        }
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, var) in vars.into_iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // gradients can still reference the forward graph
            let g = g.detach();
            let theta = var.as_tensor().detach();
            let g = if c.weight_decay != 0.0 {
                (g + theta.affine(c.weight_decay, 0.0)?)?
            } else {
                g
            };
            let m = ((&self.first[i] * c.beta1)? + (&g * (1.0 - c.beta1))?)?;
            let v = ((&self.second[i] * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?;
            let m_hat = (&m / bias1)?;
            let v_hat = (&v / bias2)?;
            let update = (m_hat / (v_hat.sqrt()? + c.eps)?)?;
            let next = (theta - (update * c.lr)?)?;
            var.set(&next)?;
            self.first[i] = m;
            self.second[i] = v;
        }
        Ok(())
    }
}
