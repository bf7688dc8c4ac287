//! Single-coil k-space acquisition: `y = A x + e`.
//!
//! All grids handed to [`apply_forward`], [`adjoint`] and
//! [`data_consistency`] are already in k-space.

mod fft;
mod mask;

pub use fft::{fft2_centered, ifft2_centered};
pub(crate) use fft::transform_centered;
pub use mask::{center_count, make_equispaced_mask, SamplingMask};

use num_complex::Complex64;

use crate::error::{config_err, shape_err, Result};
use crate::grid::ComplexGrid;
use crate::rng::Rng;

/// Additive complex Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseSpec {
    /// Per-component standard deviation.
    pub std: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self { std: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std >= 0.0) || !self.std.is_finite() {
            return Err(config_err!("noise std must be >= 0, got {}", self.std));
        }
        Ok(())
    }
}

fn check_width(grid: &ComplexGrid, mask: &SamplingMask) -> Result<()> {
    if grid.width() != mask.width || mask.kept_columns.len() != mask.width {
        return Err(shape_err!(
            "mask width {} does not match grid width {}",
            mask.width,
            grid.width()
        ));
    }
    Ok(())
}

/// Zeroes every column the mask excludes.
fn project(x: &ComplexGrid, mask: &SamplingMask) -> ComplexGrid {
    let mut out = x.clone();
    let w = out.width();
    for (i, z) in out.values_mut().iter_mut().enumerate() {
        if !mask.kept_columns[i % w] {
            *z = Complex64::new(0.0, 0.0);
        }
    }
    out
}

/// `y = A x + e`. Noise is drawn only on acquired columns, so `y` stays
/// exactly zero wherever the mask excludes a column.
pub fn apply_forward(
    x: &ComplexGrid,
    mask: &SamplingMask,
    noise: &NoiseSpec,
) -> Result<ComplexGrid> {
    check_width(x, mask)?;
    noise.validate()?;
    let mut y = project(x, mask);
    if noise.std > 0.0 {
        let mut rng = Rng::new(noise.seed);
        let w = y.width();
        for (i, z) in y.values_mut().iter_mut().enumerate() {
            let (re, im) = (rng.normal(), rng.normal());
            if mask.kept_columns[i % w] {
                *z += Complex64::new(noise.std * re, noise.std * im);
            }
        }
    }
    Ok(y)
}

/// `A^T y`; the sampling operator is a real 0/1 diagonal, so this is `A y`.
pub fn adjoint(y: &ComplexGrid, mask: &SamplingMask) -> Result<ComplexGrid> {
    check_width(y, mask)?;
    Ok(project(y, mask))
}

/// `A^T (A x - y)`.
pub fn data_consistency(
    x: &ComplexGrid,
    y: &ComplexGrid,
    mask: &SamplingMask,
) -> Result<ComplexGrid> {
    x.expect_same_shape(y)?;
    check_width(x, mask)?;
    let residual = project(x, mask).sub(y)?;
    Ok(project(&residual, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn random_grid(h: usize, w: usize, seed: u64) -> ComplexGrid {
        let mut rng = Rng::new(seed);
        let v = (0..h * w)
            .map(|_| Complex64::new(rng.normal(), rng.normal()))
            .collect();
        ComplexGrid::new(h, w, v).unwrap()
    }

    fn noiseless() -> NoiseSpec {
        NoiseSpec::none()
    }

    #[test]
    fn full_mask_is_identity() {
        let x = random_grid(8, 16, 1);
        let m = SamplingMask::fully_sampled(16);
        assert_eq!(apply_forward(&x, &m, &noiseless()).unwrap(), x);
        assert_eq!(adjoint(&x, &m).unwrap(), x);
    }

    #[test]
    fn empty_mask_annihilates() {
        let x = random_grid(8, 16, 2);
        let m = SamplingMask::from_columns(vec![false; 16]);
        let y = apply_forward(&x, &m, &noiseless()).unwrap();
        assert_eq!(y.norm_sqr(), 0.0);
    }

    #[test]
    fn excluded_columns_have_zero_energy() {
        let m = make_equispaced_mask(16, 4, 0.125, 1).unwrap();
        for seed in 0..5 {
            let x = random_grid(16, 16, seed);
            let noise = NoiseSpec { std: 0.3, seed };
            let y = apply_forward(&x, &m, &noise).unwrap();
            for r in 0..16 {
                for c in (0..16).filter(|&c| !m.is_kept(c)) {
                    assert_eq!(y.get(r, c).norm_sqr(), 0.0);
                }
            }
        }
    }

    #[test]
    fn noise_is_reproducible_and_scaled() {
        let x = ComplexGrid::zeros(32, 32).unwrap();
        let m = SamplingMask::fully_sampled(32);
        let spec = NoiseSpec { std: 0.5, seed: 9 };
        let a = apply_forward(&x, &m, &spec).unwrap();
        let b = apply_forward(&x, &m, &spec).unwrap();
        assert_eq!(a, b);
        let var = a.norm_sqr() / (2.0 * 1024.0);
        assert!((var.sqrt() - 0.5).abs() < 0.05, "empirical std {}", var.sqrt());
        let other = apply_forward(&x, &m, &NoiseSpec { std: 0.5, seed: 10 }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn negative_noise_rejected() {
        let x = ComplexGrid::zeros(4, 4).unwrap();
        let m = SamplingMask::fully_sampled(4);
        assert!(apply_forward(&x, &m, &NoiseSpec { std: -1.0, seed: 0 }).is_err());
    }

    #[test]
    fn adjoint_of_projection_is_idempotent() {
        let x = random_grid(16, 16, 3);
        let m = make_equispaced_mask(16, 4, 0.125, 0).unwrap();
        let ax = apply_forward(&x, &m, &noiseless()).unwrap();
        assert_eq!(adjoint(&ax, &m).unwrap(), ax);
        assert_eq!(apply_forward(&ax, &m, &noiseless()).unwrap(), ax);
    }

    #[test]
    fn adjoint_identity() {
        let m = make_equispaced_mask(16, 8, 0.08, 3).unwrap();
        for seed in 0..10 {
            let x = random_grid(16, 16, seed);
            let y = random_grid(16, 16, seed + 100);
            let lhs = apply_forward(&x, &m, &noiseless()).unwrap().real_dot(&y);
            let rhs = x.real_dot(&adjoint(&y, &m).unwrap());
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch() {
        let x = random_grid(8, 8, 0);
        let m = SamplingMask::fully_sampled(16);
        assert!(apply_forward(&x, &m, &noiseless()).is_err());
        assert!(adjoint(&x, &m).is_err());
        assert!(data_consistency(&x, &x, &m).is_err());
    }

    #[test]
    fn data_consistency_cases() {
        let m = make_equispaced_mask(16, 4, 0.125, 2).unwrap();
        let x = random_grid(16, 16, 5);
        let y = apply_forward(&x, &m, &noiseless()).unwrap();
        assert_eq!(data_consistency(&x, &y, &m).unwrap().norm_sqr(), 0.0);

        let zero = ComplexGrid::zeros(16, 16).unwrap();
        let dc = data_consistency(&zero, &y, &m).unwrap();
        assert_eq!(dc, adjoint(&y, &m).unwrap().scale(-1.0));

        let other = random_grid(16, 16, 6);
        let dc = data_consistency(&x, &other, &m).unwrap();
        for r in 0..16 {
            for c in (0..16).filter(|&c| !m.is_kept(c)) {
                assert_eq!(dc.get(r, c).norm_sqr(), 0.0);
            }
        }
    }
}
