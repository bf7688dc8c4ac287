//! Image quality metrics on real `[H, W]` images.

use crate::array::RealArray;
use crate::autodiff::{NodeId, Tape};
use crate::error::{config_err, shape_err, Result};

/// PSNR reported for identical images.
pub const DEFAULT_PSNR_CAP: f64 = 100.0;

fn check_pair(reference: &RealArray, test: &RealArray) -> Result<()> {
    reference.expect_same_dims(test)?;
    if reference.dims().len() != 2 {
        return Err(shape_err!("expected [H, W] images, got {:?}", reference.dims()));
    }
    Ok(())
}

/// `10 log10(range^2 / MSE)`, or `cap` when the images are identical.
pub fn psnr_with_cap(reference: &RealArray, test: &RealArray, data_range: f64, cap: f64) -> Result<f64> {
    reference.expect_same_dims(test)?;
    if !(data_range > 0.0) {
        return Err(config_err!("data range must be positive, got {data_range}"));
    }
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(cap);
    }
    Ok(10.0 * libm::log10(data_range * data_range / mse))
}

pub fn psnr(reference: &RealArray, test: &RealArray, data_range: f64) -> Result<f64> {
    psnr_with_cap(reference, test, data_range, DEFAULT_PSNR_CAP)
}

/// Mean local SSIM over every `window x window` patch fully inside the
/// image, with a uniform window and sample (unbiased) local covariances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

/// Records `1 - SSIM(reference, test)` on the tape. Both inputs are `[H, W]`
/// nodes; gradients flow into whichever of them needs one.
pub fn ssim_loss_on_tape(
    tape: &mut Tape,
    reference: NodeId,
    test: NodeId,
    cfg: &SsimConfig,
) -> Result<NodeId> {
    let ssim = ssim_on_tape(tape, reference, test, cfg)?;
    let neg = tape.scale(ssim, -1.0)?;
    tape.add_scalar(neg, 1.0)
}

fn ssim_on_tape(tape: &mut Tape, x: NodeId, y: NodeId, cfg: &SsimConfig) -> Result<NodeId> {
    check_pair(tape.value(x), tape.value(y))?;
    if !(cfg.data_range > 0.0) {
        return Err(config_err!("data range must be positive, got {}", cfg.data_range));
    }
    let dims = tape.value(x).dims();
    if cfg.window < 2 || cfg.window > dims[0] || cfg.window > dims[1] {
        return Err(shape_err!("SSIM window {} does not fit {:?}", cfg.window, dims));
    }
    let c1 = (cfg.k1 * cfg.data_range) * (cfg.k1 * cfg.data_range);
    let c2 = (cfg.k2 * cfg.data_range) * (cfg.k2 * cfg.data_range);
    let np = (cfg.window * cfg.window) as f64;
    let cov_norm = np / (np - 1.0);
    let w = cfg.window;

    let ux = tape.box_mean(x, w)?;
    let uy = tape.box_mean(y, w)?;
    let xx = tape.mul(x, x)?;
    let yy = tape.mul(y, y)?;
    let xy = tape.mul(x, y)?;
    let uxx = tape.box_mean(xx, w)?;
    let uyy = tape.box_mean(yy, w)?;
    let uxy = tape.box_mean(xy, w)?;

    let ux2 = tape.mul(ux, ux)?;
    let uy2 = tape.mul(uy, uy)?;
    let uxuy = tape.mul(ux, uy)?;
    let vx = tape.sub(uxx, ux2)?;
    let vx = tape.scale(vx, cov_norm)?;
    let vy = tape.sub(uyy, uy2)?;
    let vy = tape.scale(vy, cov_norm)?;
    let vxy = tape.sub(uxy, uxuy)?;
    let vxy = tape.scale(vxy, cov_norm)?;

    let a1 = tape.scale(uxuy, 2.0)?;
    let a1 = tape.add_scalar(a1, c1)?;
    let a2 = tape.scale(vxy, 2.0)?;
    let a2 = tape.add_scalar(a2, c2)?;
    let b1 = tape.add(ux2, uy2)?;
    let b1 = tape.add_scalar(b1, c1)?;
    let b2 = tape.add(vx, vy)?;
    let b2 = tape.add_scalar(b2, c2)?;

    let num = tape.mul(a1, a2)?;
    let den = tape.mul(b1, b2)?;
    let map = tape.div(num, den)?;
    tape.reduce_mean(map)
}

pub fn ssim_with(reference: &RealArray, test: &RealArray, cfg: &SsimConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(reference.clone())?;
    let y = tape.constant(test.clone())?;
    let s = ssim_on_tape(&mut tape, x, y, cfg)?;
    Ok(tape.value(s).data()[0])
}

/// SSIM with window 7, `K1 = 0.01`, `K2 = 0.03`.
pub fn ssim(reference: &RealArray, test: &RealArray, data_range: f64) -> Result<f64> {
    ssim_with(
        reference,
        test,
        &SsimConfig {
            data_range,
            ..SsimConfig::default()
        },
    )
}

/// `1 - SSIM` with the default configuration and unit data range.
pub fn ssim_loss(reference: &RealArray, test: &RealArray) -> Result<f64> {
    Ok(1.0 - ssim(reference, test, 1.0)?)
}
