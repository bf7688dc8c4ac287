//! 1-D equispaced column masks replicated over rows.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, Result};

/// Column sampling pattern realizing the diagonal operator `A`.
///
/// Masks built by [`make_equispaced_mask`] record their generating
/// parameters; masks from [`SamplingMask::from_columns`] carry zeros there.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplingMask {
    pub width: usize,
    pub acceleration: usize,
    pub center_fraction: f64,
    pub offset: usize,
    pub kept_columns: Vec<bool>,
}

/// Number of always-sampled central columns, rounded half away from zero.
pub fn center_count(width: usize, center_fraction: f64) -> usize {
    libm::round(width as f64 * center_fraction) as usize
}

/// Keeps `round(width * center_fraction)` central columns plus every column
/// congruent to `offset` modulo `acceleration`.
pub fn make_equispaced_mask(
    width: usize,
    acceleration: usize,
    center_fraction: f64,
    offset: usize,
) -> Result<SamplingMask> {
    if width == 0 {
        return Err(config_err!("mask width must be positive"));
    }
    if acceleration == 0 || acceleration > width {
        return Err(config_err!(
            "acceleration must lie in 1..={width}, got {acceleration}"
        ));
    }
    if !(center_fraction > 0.0 && center_fraction <= 1.0) {
        return Err(config_err!(
            "center fraction must lie in (0, 1], got {center_fraction}"
        ));
    }
    if offset >= acceleration {
        return Err(config_err!(
            "offset {offset} must be below acceleration {acceleration}"
        ));
    }
    let n_center = center_count(width, center_fraction).min(width);
    let start = (width - n_center + 1) / 2;
    let mut kept = vec![false; width];
    for k in kept.iter_mut().skip(start).take(n_center) {
        *k = true;
    }
    for k in kept.iter_mut().skip(offset).step_by(acceleration) {
        *k = true;
    }
    Ok(SamplingMask {
        width,
        acceleration,
        center_fraction,
        offset,
        kept_columns: kept,
    })
}

impl SamplingMask {
    pub fn from_columns(kept_columns: Vec<bool>) -> Self {
        Self {
            width: kept_columns.len(),
            acceleration: 0,
            center_fraction: 0.0,
            offset: 0,
            kept_columns,
        }
    }

    pub fn fully_sampled(width: usize) -> Self {
        Self::from_columns(vec![true; width])
    }

    pub fn kept_count(&self) -> usize {
        self.kept_columns.iter().filter(|&&k| k).count()
    }

    pub fn sampled_fraction(&self) -> f64 {
        self.kept_count() as f64 / self.width as f64
    }

    pub fn is_kept(&self, column: usize) -> bool {
        self.kept_columns[column]
    }

    /// Re-derives an equispaced mask from its parameters and checks the
    /// stored columns agree. Explicit masks only need a consistent width.
    pub fn validate(&self) -> Result<()> {
        if self.kept_columns.len() != self.width {
            return Err(config_err!(
                "mask width {} but {} column flags",
                self.width,
                self.kept_columns.len()
            ));
        }
        if self.acceleration == 0 {
            return Ok(());
        }
        let expected = make_equispaced_mask(
            self.width,
            self.acceleration,
            self.center_fraction,
            self.offset,
        )?;
        if expected.kept_columns != self.kept_columns {
            return Err(config_err!("kept columns disagree with mask parameters"));
        }
        Ok(())
    }
}
