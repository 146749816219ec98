use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 factor added to the gradient as `weight_decay * theta`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates for one tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<Real>,
    pub v: Vec<Real>,
}

/// One bias-corrected Adam update of `theta` in place; `t` is the 1-based
/// step number.
pub fn adam_step(
    theta: &mut [Real],
    grad: &[Real],
    state: &mut AdamMoments,
    t: u64,
    lr: Real,
    cfg: &AdamConfig,
) {
    if state.m.len() != theta.len() {
        state.m = vec![0.0; theta.len()];
        state.v = vec![0.0; theta.len()];
    }
    let (b1, b2) = (cfg.beta1 as Real, cfg.beta2 as Real);
    let eps = cfg.eps as Real;
    let wd = cfg.weight_decay as Real;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..theta.len() {
        let g = grad[i] + wd * theta[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        theta[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Adam over every tensor of a [`ParamSet`], reading its gradient buffers.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    moments: Vec<AdamMoments>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        let ok = (0.0..1.0).contains(&config.beta1)
            && (0.0..1.0).contains(&config.beta2)
            && config.eps > 0.0
            && config.weight_decay >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid Adam settings {config:?}")));
        }
        Ok(Self {
            config,
            moments: Vec::new(),
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet, lr: Real) {
        let all: Vec<ParamId> = (0..params.len()).collect();
        self.step_only(params, lr, &all);
    }

    /// Updates only `ids`; the others keep their values and moments.
    pub fn step_only(&mut self, params: &mut ParamSet, lr: Real, ids: &[ParamId]) {
        self.t += 1;
        if self.moments.len() < params.len() {
            self.moments.resize_with(params.len(), AdamMoments::default);
        }
        for &id in ids {
            let grad = params.grad(id).to_vec();
            adam_step(
                params.get_mut(id).data_mut(),
                &grad,
                &mut self.moments[id],
                self.t,
                lr,
                &self.config,
            );
        }
    }
}
