use crate::error::{config_err, Result};
use crate::grid::ComplexGrid;
use crate::physics::{data_consistency, SamplingMask};

/// Isotropic Gaussian prior `N(mean, tau^2 I)` over k-space grids. Its score
/// `-(x - mean) / tau^2` is analytic, which makes the flow solvable in
/// closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: ComplexGrid,
    pub tau: f64,
}

impl GaussianPrior {
    pub fn new(mean: ComplexGrid, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(config_err!("prior std tau must be positive, got {tau}"));
        }
        if !mean.is_finite() {
            return Err(config_err!("prior mean must be finite"));
        }
        Ok(Self { mean, tau })
    }

    /// `grad log p(x)`.
    pub fn score(&self, x: &ComplexGrid) -> Result<ComplexGrid> {
        Ok(self.mean.sub(x)?.scale(1.0 / (self.tau * self.tau)))
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(config_err!("sigma must be positive, got {sigma}"));
    }
    Ok(())
}

/// `|A x - y|^2 / (2 sigma^2) - log p(x)`, with the prior's normalization
/// constant dropped.
pub fn energy(
    x: &ComplexGrid,
    y: &ComplexGrid,
    mask: &SamplingMask,
    prior: &GaussianPrior,
    sigma: f64,
) -> Result<f64> {
    check_sigma(sigma)?;
    // A^T(Ax - y) agrees with Ax - y on kept columns and is zero elsewhere,
    // where y is zero as well for any measured y.
    let residual = data_consistency(x, y, mask)?;
    let off_support: f64 = y
        .values()
        .iter()
        .enumerate()
        .filter(|(i, _)| !mask.kept_columns[i % y.width()])
        .map(|(_, z)| z.norm_sqr())
        .sum();
    let data = (residual.norm_sqr() + off_support) / (2.0 * sigma * sigma);
    let prior_term = x.sub(&prior.mean)?.norm_sqr() / (2.0 * prior.tau * prior.tau);
    Ok(data + prior_term)
}

/// `lambda(t) * (score(x) - A^T (A x - y) / sigma^2)`.
pub fn analytic_velocity(
    x: &ComplexGrid,
    t: f64,
    y: &ComplexGrid,
    mask: &SamplingMask,
    prior: &GaussianPrior,
    lambda: impl Fn(f64) -> f64,
    sigma: f64,
) -> Result<ComplexGrid> {
    check_sigma(sigma)?;
    let score = prior.score(x)?;
    let dc = data_consistency(x, y, mask)?;
    let l = lambda(t);
    score.zip_map(&dc, |s, d| (s - d / (sigma * sigma)) * l)
}

/// One forward Euler step `x + delta * v(x, t)`.
pub fn euler_step<F>(x: &ComplexGrid, t_k: f64, delta_k: f64, field: F) -> Result<ComplexGrid>
where
    F: FnOnce(&ComplexGrid, f64) -> Result<ComplexGrid>,
{
    if !(delta_k > 0.0) {
        return Err(crate::error::domain_err!("Euler step needs delta > 0, got {delta_k}"));
    }
    let v = field(x, t_k)?;
    x.zip_map(&v, |a, b| a + b * delta_k)
}
