//! Radix-2 Cooley-Tukey FFT with centered, unitary 2-D transforms.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::Result;
use crate::grid::ComplexGrid;

fn twiddles(n: usize, inverse: bool) -> Vec<Complex64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n / 2)
        .map(|k| {
            let angle = sign * core::f64::consts::TAU * k as f64 / n as f64;
            Complex64::new(libm::cos(angle), libm::sin(angle))
        })
        .collect()
}

/// Unnormalized in-place transform of a power-of-two length buffer.
fn fft_in_place(buf: &mut [Complex64], tw: &[Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let stride = n / size;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let w = tw[k * stride];
                let u = buf[start + k];
                let v = buf[start + k + half] * w;
                buf[start + k] = u + v;
                buf[start + k + half] = u - v;
            }
        }
        size *= 2;
    }
}

/// Rolls a row-major grid by half its extents in both axes.
fn shift_half(values: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    let (dh, dw) = (height / 2, width / 2);
    let mut out = vec![Complex64::new(0.0, 0.0); values.len()];
    for r in 0..height {
        let rr = (r + dh) % height;
        for c in 0..width {
            out[rr * width + (c + dw) % width] = values[r * width + c];
        }
    }
    out
}

/// Centered unitary 2-D transform of a row-major buffer.
///
/// Extents must be powers of two (checked by callers); for even extents the
/// forward and inverse half-shifts coincide.
pub(crate) fn transform_centered(
    values: &[Complex64],
    height: usize,
    width: usize,
    inverse: bool,
) -> Vec<Complex64> {
    let mut data = shift_half(values, height, width);
    let tw_row = twiddles(width, inverse);
    for row in data.chunks_exact_mut(width) {
        fft_in_place(row, &tw_row);
    }
    let tw_col = twiddles(height, inverse);
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = data[r * width + c];
        }
        fft_in_place(&mut column, &tw_col);
        for r in 0..height {
            data[r * width + c] = column[r];
        }
    }
    let scale = 1.0 / libm::sqrt((height * width) as f64);
    let mut out = shift_half(&data, height, width);
    for z in &mut out {
        *z *= scale;
    }
    out
}

/// Image to k-space, DC at the grid center, `1/sqrt(HW)` normalization.
pub fn fft2_centered(img: &ComplexGrid) -> Result<ComplexGrid> {
    let (h, w) = (img.height(), img.width());
    ComplexGrid::new(h, w, transform_centered(img.values(), h, w, false))
}

/// Inverse of [`fft2_centered`].
pub fn ifft2_centered(kspace: &ComplexGrid) -> Result<ComplexGrid> {
    let (h, w) = (kspace.height(), kspace.width());
    ComplexGrid::new(h, w, transform_centered(kspace.values(), h, w, true))
}
