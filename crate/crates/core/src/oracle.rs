//! Gaussian-prior reference for the cascade/flow correspondence.
//!
//! With the prior `N(m, tau^2 I)` and constant `lambda`, the conditional
//! velocity field is affine and diagonal in k-space:
//! `dx/dt = b - a x` per entry, with
//! `a = lambda (1/tau^2 + m_f/sigma^2)` and
//! `b = lambda (m_f y/sigma^2 + m/tau^2)` (`m_f` the 0/1 column mask). The
//! exact solution is `b/a + (x(0) - b/a) exp(-a t)`.

use alloc::format;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{config_err, shape_err, Error, Result};
use crate::flow::{analytic_velocity, energy, euler_step, CascadeSchedule, GaussianPrior};
use crate::grid::ComplexGrid;
use crate::physics::{adjoint, apply_forward, data_consistency, make_equispaced_mask, NoiseSpec, SamplingMask};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFlowCoefficients {
    height: usize,
    width: usize,
    a: Vec<f64>,
    b: Vec<Complex64>,
}

impl LinearFlowCoefficients {
    pub fn new(height: usize, width: usize, a: Vec<f64>, b: Vec<Complex64>) -> Result<Self> {
        if a.len() != height * width || b.len() != height * width {
            return Err(shape_err!("coefficients do not cover a {height}x{width} grid"));
        }
        Ok(Self { height, width, a, b })
    }

    pub fn from_prior(
        y: &ComplexGrid,
        mask: &SamplingMask,
        prior: &GaussianPrior,
        lambda: f64,
        sigma: f64,
    ) -> Result<Self> {
        y.expect_same_shape(&prior.mean)?;
        if mask.width != y.width() {
            return Err(shape_err!("mask width {} != grid width {}", mask.width, y.width()));
        }
        let (tau2, sigma2) = (prior.tau * prior.tau, sigma * sigma);
        let w = y.width();
        let mut a = Vec::with_capacity(y.values().len());
        let mut b = Vec::with_capacity(y.values().len());
        for (i, (yv, mv)) in y.values().iter().zip(prior.mean.values()).enumerate() {
            let kept = if mask.kept_columns[i % w] { 1.0 } else { 0.0 };
            a.push(lambda * (1.0 / tau2 + kept / sigma2));
            b.push((yv * (kept / sigma2) + mv / tau2) * lambda);
        }
        Self::new(y.height(), w, a, b)
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[Complex64] {
        &self.b
    }

    /// `b - a x`.
    pub fn velocity(&self, x: &ComplexGrid) -> Result<ComplexGrid> {
        self.check(x)?;
        let values = x
            .values()
            .iter()
            .zip(self.a.iter().zip(&self.b))
            .map(|(xv, (a, b))| b - xv * *a)
            .collect();
        ComplexGrid::new(self.height, self.width, values)
    }

    fn check(&self, x: &ComplexGrid) -> Result<()> {
        if x.height() != self.height || x.width() != self.width {
            return Err(shape_err!(
                "grid {}x{} does not match coefficients {}x{}",
                x.height(),
                x.width(),
                self.height,
                self.width
            ));
        }
        Ok(())
    }
}

/// Exact state at time `t` starting from `x0` at time 0.
pub fn closed_form_solution(x0: &ComplexGrid, t: f64, coeffs: &LinearFlowCoefficients) -> Result<ComplexGrid> {
    coeffs.check(x0)?;
    if let Some(a) = coeffs.a.iter().find(|&&a| !(a > 0.0)) {
        return Err(Error::Contract(format!("decay rate must be positive, got {a}")));
    }
    let values = x0
        .values()
        .iter()
        .zip(coeffs.a.iter().zip(&coeffs.b))
        .map(|(xv, (&a, b))| {
            let fixed = b / a;
            fixed + (xv - fixed) * libm::exp(-a * t)
        })
        .collect();
    ComplexGrid::new(x0.height(), x0.width(), values)
}

/// Classical four-stage Runge-Kutta over `[0, t_end]` with uniform steps.
pub fn rk4_integrate<F>(x0: &ComplexGrid, t_end: f64, n_steps: usize, field: F) -> Result<ComplexGrid>
where
    F: Fn(&ComplexGrid, f64) -> Result<ComplexGrid>,
{
    if n_steps == 0 {
        return Err(config_err!("rk4 needs at least one step"));
    }
    let h = t_end / n_steps as f64;
    let mut x = x0.clone();
    for i in 0..n_steps {
        let t = i as f64 * h;
        let k1 = field(&x, t)?;
        let k2 = field(&x.add(&k1.scale(0.5 * h))?, t + 0.5 * h)?;
        let k3 = field(&x.add(&k2.scale(0.5 * h))?, t + 0.5 * h)?;
        let k4 = field(&x.add(&k3.scale(h))?, t + h)?;
        let incr = k1.add(&k2.scale(2.0))?.add(&k3.scale(2.0))?.add(&k4)?;
        x = x.add(&incr.scale(h / 6.0))?;
        if !x.is_finite() {
            return Err(Error::NonFinite("rk4_integrate"));
        }
    }
    Ok(x)
}

/// Cascade update with the analytic prior score in place of the learned
/// regularizer: `x - eta_k A^T(Ax - y) + eta_k mu (m - x)/tau^2`.
pub fn analytic_cascade_update(
    x: &ComplexGrid,
    y: &ComplexGrid,
    mask: &SamplingMask,
    k: usize,
    schedule: &CascadeSchedule,
    prior: &GaussianPrior,
) -> Result<ComplexGrid> {
    if k >= schedule.cascades() {
        return Err(Error::Contract(format!("cascade {k} out of range")));
    }
    let eta = schedule.eta()[k];
    let dc = data_consistency(x, y, mask)?;
    let score = prior.score(x)?;
    x.sub(&dc.scale(eta))?.add(&score.scale(eta * schedule.mu()))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct VerificationConfig {
    pub size: usize,
    pub instances: usize,
    pub cascades: Vec<usize>,
    pub alpha: f64,
    pub tau: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub acceleration: usize,
    pub center_fraction: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            size: 16,
            instances: 20,
            cascades: alloc::vec![6, 12, 24, 48],
            alpha: 0.0,
            tau: 1.0,
            sigma: 1.0,
            lambda: 1.0,
            acceleration: 4,
            center_fraction: 0.125,
            noise_std: 0.01,
            seed: 0,
        }
    }
}

pub const STEP_TOLERANCE: f64 = 1e-12;
pub const SLOPE_TARGET: f64 = 1.0;
pub const SLOPE_BAND: f64 = 0.2;
const ENERGY_SLACK: f64 = 1e-10;
const ENERGY_SAMPLES: usize = 21;
const RK4_STEPS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VerificationReport {
    pub config: VerificationConfig,
    /// Largest entry-wise gap between an analytic cascade and the Euler step
    /// of the analytic field, over all instances, cascade counts and steps.
    pub max_step_discrepancy: f64,
    /// Mean over instances of `||x_Euler(1) - x(1)||` per cascade count.
    pub global_errors: Vec<f64>,
    /// Negated least-squares slope of `log error` against `log K` for the
    /// mean errors, and its range over individual instances.
    pub slope: f64,
    pub slope_min: f64,
    pub slope_max: f64,
    /// Largest gap between RK4 (256 steps) and the closed form at `t = 1`.
    pub rk4_max_error: f64,
    pub energy_monotone: bool,
    pub decoupled: bool,
    pub step_pass: bool,
    pub slope_pass: bool,
    pub passed: bool,
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn convergence_order(cascades: &[usize], errors: &[f64]) -> f64 {
    let lk: Vec<f64> = cascades.iter().map(|&k| libm::log(k as f64)).collect();
    let le: Vec<f64> = errors.iter().map(|&e| libm::log(e)).collect();
    -fit_slope(&lk, &le)
}

fn random_grid(h: usize, w: usize, rng: &mut Rng) -> Result<ComplexGrid> {
    let values = (0..h * w).map(|_| Complex64::new(rng.normal(), rng.normal())).collect();
    ComplexGrid::new(h, w, values)
}

struct Instance {
    y: ComplexGrid,
    mask: SamplingMask,
    prior: GaussianPrior,
    coeffs: LinearFlowCoefficients,
    x0: ComplexGrid,
}

fn make_instance(cfg: &VerificationConfig, rng: &mut Rng, noise_seed: u64) -> Result<Instance> {
    let n = cfg.size;
    let mask = make_equispaced_mask(n, cfg.acceleration, cfg.center_fraction, 0)?;
    let truth = random_grid(n, n, rng)?;
    let mean = random_grid(n, n, rng)?;
    let noise = NoiseSpec {
        std: cfg.noise_std,
        seed: noise_seed,
    };
    let y = apply_forward(&truth, &mask, &noise)?;
    let prior = GaussianPrior::new(mean, cfg.tau)?;
    let coeffs = LinearFlowCoefficients::from_prior(&y, &mask, &prior, cfg.lambda, cfg.sigma)?;
    let x0 = adjoint(&y, &mask)?;
    Ok(Instance {
        y,
        mask,
        prior,
        coeffs,
        x0,
    })
}

/// Checks that analytic cascades are Euler steps of the analytic flow and
/// that the Euler trajectory converges at first order to the exact flow.
pub fn verify_correspondence(cfg: &VerificationConfig) -> Result<VerificationReport> {
    if cfg.instances == 0 || cfg.cascades.len() < 2 {
        return Err(config_err!("need at least one instance and two cascade counts"));
    }
    if !(cfg.tau > 0.0) || !(cfg.sigma > 0.0) || !(cfg.lambda > 0.0) {
        return Err(config_err!("tau, sigma and lambda must be positive"));
    }
    let schedules = cfg
        .cascades
        .iter()
        .map(|&k| CascadeSchedule::constant_lambda(k, cfg.alpha, cfg.lambda, cfg.sigma))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = Rng::new(cfg.seed);
    let mut max_step = 0.0f64;
    let mut sums = alloc::vec![0.0; cfg.cascades.len()];
    let (mut slope_min, mut slope_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut rk4_max_error = 0.0f64;
    let mut energy_monotone = true;
    let mut decoupled = true;

    for i in 0..cfg.instances {
        let inst = make_instance(cfg, &mut rng, cfg.seed.wrapping_add(1 + i as u64))?;
        let exact = closed_form_solution(&inst.x0, 1.0, &inst.coeffs)?;
        let field = |x: &ComplexGrid, t: f64| {
            analytic_velocity(x, t, &inst.y, &inst.mask, &inst.prior, |_| cfg.lambda, cfg.sigma)
        };

        let mut errors = Vec::with_capacity(schedules.len());
        for (s, schedule) in schedules.iter().enumerate() {
            let mut x = inst.x0.clone();
            for k in 0..schedule.cascades() {
                let cascade = analytic_cascade_update(&x, &inst.y, &inst.mask, k, schedule, &inst.prior)?;
                let euler = euler_step(&x, schedule.t()[k], schedule.delta()[k], field)?;
                if !cascade.is_finite() || !euler.is_finite() {
                    return Err(Error::Divergence { cascade: k });
                }
                max_step = max_step.max(cascade.max_abs_diff(&euler));
                x = cascade;
            }
            let err = x.sub(&exact)?.norm();
            sums[s] += err;
            errors.push(err);
        }
        let order = convergence_order(&cfg.cascades, &errors);
        slope_min = slope_min.min(order);
        slope_max = slope_max.max(order);

        let rk4 = rk4_integrate(&inst.x0, 1.0, RK4_STEPS, |x, _| inst.coeffs.velocity(x))?;
        rk4_max_error = rk4_max_error.max(rk4.max_abs_diff(&exact));

        let mut previous = f64::INFINITY;
        for j in 0..ENERGY_SAMPLES {
            let t = j as f64 / (ENERGY_SAMPLES - 1) as f64;
            let state = closed_form_solution(&inst.x0, t, &inst.coeffs)?;
            let e = energy(&state, &inst.y, &inst.mask, &inst.prior, cfg.sigma)?;
            if e > previous + ENERGY_SLACK {
                energy_monotone = false;
            }
            previous = e;
        }

        let entry = (i * 7919) % inst.x0.values().len();
        let mut bumped = inst.x0.clone();
        bumped.values_mut()[entry] += Complex64::new(1.0, -0.5);
        let moved = closed_form_solution(&bumped, 1.0, &inst.coeffs)?;
        for (j, (p, q)) in moved.values().iter().zip(exact.values()).enumerate() {
            if (j == entry) == (p == q) {
                decoupled = false;
            }
        }
    }

    let global_errors: Vec<f64> = sums.iter().map(|s| s / cfg.instances as f64).collect();
    let slope = convergence_order(&cfg.cascades, &global_errors);
    let in_band = |s: f64| (s - SLOPE_TARGET).abs() <= SLOPE_BAND;
    let step_pass = max_step <= STEP_TOLERANCE;
    let slope_pass = in_band(slope) && in_band(slope_min) && in_band(slope_max);
    Ok(VerificationReport {
        config: cfg.clone(),
        max_step_discrepancy: max_step,
        global_errors,
        slope,
        slope_min,
        slope_max,
        rk4_max_error,
        energy_monotone,
        decoupled,
        step_pass,
        slope_pass,
        passed: step_pass && slope_pass && energy_monotone && decoupled,
    })
}
