//! Complex-valued 2-D grids (images or their k-space).

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::array::RealArray;
use crate::error::{shape_err, Result};

/// Row-major complex grid with power-of-two extents.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    height: usize,
    width: usize,
    values: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn new(height: usize, width: usize, values: Vec<Complex64>) -> Result<Self> {
        if !height.is_power_of_two() || !width.is_power_of_two() {
            return Err(shape_err!(
                "grid extents must be powers of two, got {height}x{width}"
            ));
        }
        if values.len() != height * width {
            return Err(shape_err!(
                "{height}x{width} grid needs {} values, got {}",
                height * width,
                values.len()
            ));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![Complex64::new(0.0, 0.0); height * width])
    }

    /// Real image with zero imaginary part.
    pub fn from_real(height: usize, width: usize, real: &[f64]) -> Result<Self> {
        Self::new(
            height,
            width,
            real.iter().map(|&r| Complex64::new(r, 0.0)).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.width + col]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(shape_err!(
                "{}x{} vs {}x{}",
                self.height,
                self.width,
                other.height,
                other.width
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &Self,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|z| z * s)
    }

    /// Sum of squared moduli.
    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.norm_sqr())
    }

    /// Real inner product of the 2-channel representations, `Re <a, b>`.
    pub fn real_dot(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a.re - b.re).abs().max((a.im - b.im).abs()))
            .fold(0.0, f64::max)
    }

    /// Pixel-wise modulus.
    pub fn magnitude(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|z| libm::sqrt(z.re * z.re + z.im * z.im))
            .collect()
    }

    /// Planar `[2, H, W]` layout: channel 0 real parts, channel 1 imaginary.
    pub fn to_channels(&self) -> RealArray {
        let n = self.values.len();
        let mut data = vec![0.0; 2 * n];
        for (i, z) in self.values.iter().enumerate() {
            data[i] = z.re;
            data[n + i] = z.im;
        }
        RealArray::new(&[2, self.height, self.width], data).expect("consistent dims")
    }

    pub fn from_channels(array: &RealArray) -> Result<Self> {
        let d = array.dims();
        if d.len() != 3 || d[0] != 2 {
            return Err(shape_err!("expected [2, H, W] channels, got {:?}", d));
        }
        let n = d[1] * d[2];
        let data = array.data();
        Self::new(
            d[1],
            d[2],
            (0..n).map(|i| Complex64::new(data[i], data[n + i])).collect(),
        )
    }
}
