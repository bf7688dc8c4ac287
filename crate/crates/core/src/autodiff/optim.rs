//! AdamW with decoupled weight decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::array::RealArray;
use crate::error::{config_err, shape_err, Result};

/// Hyperparameters. Defaults: `beta1 = 0.9`, `beta2 = 0.999`,
/// `eps = 1e-8`, no weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(config_err!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err!("betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(config_err!("eps must be positive and weight decay non-negative"));
        }
        Ok(())
    }
}

/// Per-parameter moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }
}

/// One AdamW update of `param` in place.
pub fn adamw_step(
    param: &mut RealArray,
    grad: &RealArray,
    state: &mut OptimizerState,
    cfg: &AdamW,
) -> Result<()> {
    cfg.validate()?;
    let n = param.len();
    if grad.dims() != param.dims() || state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(shape_err!(
            "parameter {:?}, gradient {:?}, moments {} / {}",
            param.dims(),
            grad.dims(),
            state.first_moment.len(),
            state.second_moment.len()
        ));
    }
    state.step += 1;
    let t = state.step as f64;
    let bias1 = 1.0 - libm::pow(cfg.beta1, t);
    let bias2 = 1.0 - libm::pow(cfg.beta2, t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    let p = param.data_mut();
    for i in 0..n {
        let g = grad.data()[i];
        p[i] *= decay;
        let m = cfg.beta1 * state.first_moment[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.second_moment[i] + (1.0 - cfg.beta2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        let m_hat = m / bias1;
        let v_hat = v / bias2;
        p[i] -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
    }
    Ok(())
}
