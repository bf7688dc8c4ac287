use crate::error::{config_err, domain_err, shape_err, Result};
use crate::grid::ComplexGrid;

/// Distance used to compare ideal and predicted velocities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum VelocityNorm {
    #[default]
    L1,
    L2,
}

/// Ideal and predicted velocity of cascade `step_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityPair {
    pub ideal: ComplexGrid,
    pub predicted: ComplexGrid,
    pub step_index: usize,
}

/// Straight-line interpolant `t * x1 + (1 - t) * x0`.
pub fn ideal_state(x0: &ComplexGrid, x1: &ComplexGrid, t: f64) -> Result<ComplexGrid> {
    if !(0.0..=1.0).contains(&t) {
        return Err(domain_err!("t must lie in [0, 1], got {t}"));
    }
    x0.zip_map(x1, |a, b| b * t + a * (1.0 - t))
}

fn step_width(t_k: f64, t_k1: f64) -> Result<f64> {
    if !(t_k1 > t_k) || t_k1 > 1.0 {
        return Err(domain_err!("need t_k < t_k1 <= 1, got {t_k} and {t_k1}"));
    }
    Ok(t_k1 - t_k)
}

/// Velocity that carries the current state `x_k` onto the interpolant at
/// `t_k1`. The start point is the network's own state, not the interpolant
/// at `t_k`.
pub fn ideal_velocity(
    x_k: &ComplexGrid,
    x0: &ComplexGrid,
    x1: &ComplexGrid,
    t_k: f64,
    t_k1: f64,
) -> Result<ComplexGrid> {
    let dt = step_width(t_k, t_k1)?;
    let target = ideal_state(x0, x1, t_k1)?;
    Ok(target.sub(x_k)?.scale(1.0 / dt))
}

/// Finite-difference velocity of two consecutive cascade states.
pub fn predicted_velocity(
    x_k: &ComplexGrid,
    x_k1: &ComplexGrid,
    t_k: f64,
    t_k1: f64,
) -> Result<ComplexGrid> {
    let dt = step_width(t_k, t_k1)?;
    Ok(x_k1.sub(x_k)?.scale(1.0 / dt))
}

/// Mean absolute (L1) or mean squared (L2) difference over all real
/// components of the two velocities.
pub fn velocity_loss(pair: &VelocityPair, norm: VelocityNorm) -> Result<f64> {
    if !pair.ideal.same_shape(&pair.predicted) {
        return Err(shape_err!("ideal and predicted velocities differ in shape"));
    }
    let n = 2 * pair.ideal.values().len();
    let total: f64 = pair
        .ideal
        .values()
        .iter()
        .zip(pair.predicted.values())
        .map(|(a, b)| {
            let (dr, di) = (a.re - b.re, a.im - b.im);
            match norm {
                VelocityNorm::L1 => dr.abs() + di.abs(),
                VelocityNorm::L2 => dr * dr + di * di,
            }
        })
        .sum();
    Ok(total / n as f64)
}

/// `recon + w * sum(velocity_losses)`.
pub fn flat_loss(recon: f64, velocity_losses: &[f64], w_velocity: f64) -> Result<f64> {
    if !(w_velocity >= 0.0) || !w_velocity.is_finite() {
        return Err(config_err!("w_velocity must be >= 0, got {w_velocity}"));
    }
    let total = recon + w_velocity * velocity_losses.iter().sum::<f64>();
    if !total.is_finite() {
        return Err(crate::Error::NonFinite("flat_loss"));
    }
    Ok(total)
}
