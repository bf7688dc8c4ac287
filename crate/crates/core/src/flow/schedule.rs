use alloc::vec::Vec;

use crate::error::{config_err, Result};

/// Time grid `t_k = 1 - (1 - k/K)^(1 + alpha)` and its increments.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSchedule {
    alpha: f64,
    t: Vec<f64>,
    delta: Vec<f64>,
}

impl TimeSchedule {
    pub fn cascades(&self) -> usize {
        self.delta.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }
}

/// `K + 1` time points, denser near `t = 1` for `alpha > 0`, uniform for
/// `alpha = 0`.
///
/// Fails for `alpha <= -1`, and when the grid is no longer strictly
/// increasing in `f64` (the last gap `(1/K)^(1 + alpha)` falls below half
/// an ulp of one).
pub fn time_schedule(cascades: usize, alpha: f64) -> Result<TimeSchedule> {
    if cascades == 0 {
        return Err(config_err!("cascade count must be at least 1"));
    }
    if !(alpha > -1.0) || !alpha.is_finite() {
        return Err(config_err!("alpha must be finite and > -1, got {alpha}"));
    }
    let k_total = cascades as f64;
    let t: Vec<f64> = (0..=cascades)
        .map(|k| 1.0 - libm::pow(1.0 - k as f64 / k_total, 1.0 + alpha))
        .collect();
    let delta: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(k) = delta.iter().position(|&d| !(d > 0.0)) {
        return Err(config_err!(
            "schedule (K={cascades}, alpha={alpha}) is not strictly increasing at step {k} in f64"
        ));
    }
    Ok(TimeSchedule { alpha, t, delta })
}

/// Time grid plus the step sizes and regularization weight it grounds:
/// `eta_k = delta_k * lambda(t_k) / sigma^2` and `mu = sigma^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSchedule {
    times: TimeSchedule,
    lambda: Vec<f64>,
    eta: Vec<f64>,
    mu: f64,
    sigma: f64,
}

pub fn ground_parameters(
    times: &TimeSchedule,
    lambda: impl Fn(f64) -> f64,
    sigma: f64,
) -> Result<CascadeSchedule> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(config_err!("sigma must be positive, got {sigma}"));
    }
    let sigma_sq = sigma * sigma;
    let lambda: Vec<f64> = times.t[..times.cascades()].iter().map(|&t| lambda(t)).collect();
    if let Some(v) = lambda.iter().find(|&&l| !(l > 0.0) || !l.is_finite()) {
        return Err(config_err!("lambda(t) must be positive, got {v}"));
    }
    let eta = times
        .delta
        .iter()
        .zip(&lambda)
        .map(|(d, l)| d * l / sigma_sq)
        .collect();
    Ok(CascadeSchedule {
        times: times.clone(),
        lambda,
        eta,
        mu: sigma_sq,
        sigma,
    })
}

impl CascadeSchedule {
    /// Schedule with a constant `lambda`.
    pub fn constant_lambda(cascades: usize, alpha: f64, lambda: f64, sigma: f64) -> Result<Self> {
        ground_parameters(&time_schedule(cascades, alpha)?, |_| lambda, sigma)
    }

    pub fn cascades(&self) -> usize {
        self.times.cascades()
    }

    pub fn alpha(&self) -> f64 {
        self.times.alpha
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn t(&self) -> &[f64] {
        &self.times.t
    }

    pub fn delta(&self) -> &[f64] {
        &self.times.delta
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    /// `lambda(t_k)` for `k < K`.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn times(&self) -> &TimeSchedule {
        &self.times
    }
}
