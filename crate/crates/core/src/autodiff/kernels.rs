//! Forward and adjoint kernels shared by the tape and plain evaluation.

use alloc::vec;
use alloc::vec::Vec;

use crate::array::RealArray;
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_y: usize,
    pub pad_x: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], pad: usize) -> Result<Self> {
        if input.len() != 3 || kernel.len() != 4 {
            return Err(shape_err!(
                "conv2d expects input [C,H,W] and kernel [O,C,kH,kW], got {:?} and {:?}",
                input,
                kernel
            ));
        }
        let (c_in, h, w) = (input[0], input[1], input[2]);
        let (c_out, kc, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kc != c_in {
            return Err(shape_err!(
                "kernel expects {kc} input channels, input has {c_in}"
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(shape_err!("kernel extents must be odd, got {kh}x{kw}"));
        }
        if pad >= kh || pad >= kw {
            return Err(shape_err!("padding {pad} must be smaller than the kernel {kh}x{kw}"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(shape_err!("kernel {kh}x{kw} larger than padded input"));
        }
        Ok(Self {
            c_in,
            c_out,
            h,
            w,
            kh,
            kw,
            pad_y: pad,
            pad_x: pad,
            h_out: h + 2 * pad - kh + 1,
            w_out: w + 2 * pad - kw + 1,
        })
    }

    fn out_pixels(&self) -> usize {
        self.h_out * self.w_out
    }
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    /// Output columns `ox` whose input column `ox + kx - pad` lies inside the
    /// image, as a half-open range.
    fn valid_columns(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad_x.saturating_sub(kx);
        let hi = (self.w + self.pad_x).saturating_sub(kx).min(self.w_out);
        (lo, hi.max(lo))
    }

    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy + ky).checked_sub(self.pad_y).filter(|&iy| iy < self.h)
    }
}

/// Unfolds zero-padded patches into a `[C*kH*kW, H'*W']` matrix.
pub(crate) fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let mut cols = Vec::with_capacity(g.patch_len() * g.out_pixels());
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let (lo, hi) = g.valid_columns(kx);
                for oy in 0..g.h_out {
                    let Some(iy) = g.input_row(oy, ky) else {
                        cols.resize(cols.len() + g.w_out, 0.0);
                        continue;
                    };
                    let src = iy * g.w + lo + kx - g.pad_x;
                    cols.resize(cols.len() + lo, 0.0);
                    cols.extend_from_slice(&plane[src..src + hi - lo]);
                    cols.resize(cols.len() + g.w_out - hi, 0.0);
                }
            }
        }
    }
    cols
}

/// Below this many rows of `a` the blocked kernel wastes most of its tile.
const SHORT_ROWS: usize = 4;

#[allow(clippy::too_many_arguments)]
fn short_gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    if csb == 1 {
        for i in 0..m {
            let row = &mut c[i * n..(i + 1) * n];
            row.fill(0.0);
            for kk in 0..k {
                let av = a[i * rsa + kk * csa];
                for (cv, bv) in row.iter_mut().zip(&b[kk * rsb..kk * rsb + n]) {
                    *cv += av * bv;
                }
            }
        }
    } else {
        // columns of b and rows of a are contiguous: plain dot products
        for i in 0..m {
            let arow = &a[i * rsa..i * rsa + k];
            for j in 0..n {
                c[i * n + j] = dot(arow, &b[j * csb..j * csb + k]);
            }
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(p, q)| p * q).sum();
    for (p, q) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += p[l] * q[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Row-major `c = a * b` with `a: m x k`, `b: k x n`. Transposes are
/// expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m <= SHORT_ROWS && (csb == 1 || (rsb == 1 && csa == 1)) {
        short_gemm(m, k, n, a, (rsa as usize, csa as usize), b, (rsb as usize, csb as usize), c);
        return;
    }
    // SAFETY: every (row, col) reached through the strides lies inside the
    // slices; callers pass dense matrices of the stated dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Cross-correlation; returns the output and the unfolded input (kept by the
/// tape for the backward pass).
pub(crate) fn conv2d_forward(
    input: &[f64],
    kernel: &[f64],
    g: &ConvGeometry,
) -> (Vec<f64>, Vec<f64>) {
    let cols = im2col(input, g);
    let (m, k, n) = (g.c_out, g.patch_len(), g.out_pixels());
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, kernel, (k as isize, 1), &cols, (n as isize, 1), &mut out);
    (out, cols)
}

pub(crate) fn conv2d_grad_kernel(grad_out: &[f64], cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (m, k, n) = (g.c_out, g.patch_len(), g.out_pixels());
    let mut dk = vec![0.0; m * k];
    // dK[m, k] = dOut[m, n] * cols^T[n, k]
    gemm(m, n, k, grad_out, (n as isize, 1), cols, (1, n as isize), &mut dk);
    dk
}

/// Input gradient as a full correlation of `dOut` with the flipped,
/// channel-transposed kernel.
pub(crate) fn conv2d_grad_input(grad_out: &[f64], kernel: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let taps = g.kh * g.kw;
    let mut flipped = vec![0.0; kernel.len()];
    for o in 0..g.c_out {
        for i in 0..g.c_in {
            for t in 0..taps {
                flipped[(i * g.c_out + o) * taps + taps - 1 - t] = kernel[(o * g.c_in + i) * taps + t];
            }
        }
    }
    let adjoint = ConvGeometry {
        c_in: g.c_out,
        c_out: g.c_in,
        h: g.h_out,
        w: g.w_out,
        kh: g.kh,
        kw: g.kw,
        pad_y: g.kh - 1 - g.pad_y,
        pad_x: g.kw - 1 - g.pad_x,
        h_out: g.h,
        w_out: g.w,
    };
    conv2d_forward(grad_out, &flipped, &adjoint).0
}

/// Standard zero-padded 2-D cross-correlation,
/// `[C_in,H,W] x [C_out,C_in,kH,kW] -> [C_out,H',W']`.
pub fn conv2d(input: &RealArray, kernel: &RealArray, pad: usize) -> Result<RealArray> {
    let g = ConvGeometry::new(input.dims(), kernel.dims(), pad)?;
    let (out, _) = conv2d_forward(input.data(), kernel.data(), &g);
    RealArray::new(&[g.c_out, g.h_out, g.w_out], out)
}

/// Adds `bias[c]` to every pixel of channel `c`.
pub(crate) fn bias_add(input: &[f64], bias: &[f64], plane: usize) -> Vec<f64> {
    let mut out = input.to_vec();
    for (chunk, b) in out.chunks_exact_mut(plane).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
    out
}

/// Mean over every `window x window` patch fully inside each `[H, W]` plane.
pub(crate) fn box_mean(input: &[f64], planes: usize, h: usize, w: usize, window: usize) -> Vec<f64> {
    let (ho, wo) = (h - window + 1, w - window + 1);
    let norm = 1.0 / (window * window) as f64;
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for dy in 0..window {
                    let row = &src[(oy + dy) * w + ox..(oy + dy) * w + ox + window];
                    acc += row.iter().sum::<f64>();
                }
                dst[oy * wo + ox] = acc * norm;
            }
        }
    }
    out
}

pub(crate) fn box_mean_adjoint(
    grad: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    window: usize,
) -> Vec<f64> {
    let (ho, wo) = (h - window + 1, w - window + 1);
    let norm = 1.0 / (window * window) as f64;
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &grad[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let g = src[oy * wo + ox] * norm;
                for dy in 0..window {
                    for v in &mut dst[(oy + dy) * w + ox..(oy + dy) * w + ox + window] {
                        *v += g;
                    }
                }
            }
        }
    }
    out
}
