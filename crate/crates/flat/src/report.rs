//! CSV, JSON and PNG outputs.

use std::path::Path;

use flat_core::phantom::{magnitude_image, Split};
use flat_core::train::{EpochLog, Evaluation, MetricsSummary, StabilityReport, TrajectoryRecord};
use flat_core::RealArray;
use image::GrayImage;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::json;

pub const TRAINING_LOG_HEADER: &str = "epoch,step,loss_total,loss_recon,loss_velocity_sum,val_psnr,val_ssim";

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for row in rows {
        w.serialize(row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    write_csv(path, log)
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleMetrics {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub zero_filled_psnr: f64,
    pub decreasing_steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRow {
    pub step: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub step: usize,
    pub psnr_mean: f64,
}

/// Everything `eval` writes as JSON.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub split: Split,
    pub metrics: MetricsSummary,
    pub zero_filled: MetricsSummary,
    pub stability: StabilityReport,
}

pub fn decreasing_steps(record: &TrajectoryRecord) -> usize {
    record.per_cascade_psnr.windows(2).filter(|w| w[1] < w[0]).count()
}

/// `metrics_<split>.csv`, `metrics_<split>.json` and the mean per-step PSNR
/// curve `stability_<split>.csv`.
pub fn write_evaluation(dir: &Path, summary: &EvalSummary, evaluation: &Evaluation) -> Result<()> {
    let split = summary.split.name();
    let rows: Vec<SampleMetrics> = evaluation
        .trajectories
        .iter()
        .enumerate()
        .map(|(index, r)| SampleMetrics {
            index,
            psnr: r.final_psnr(),
            ssim: r.final_ssim(),
            zero_filled_psnr: summary.zero_filled.psnr[index],
            decreasing_steps: decreasing_steps(r),
        })
        .collect();
    write_csv(&dir.join(format!("metrics_{split}.csv")), &rows)?;
    let curve: Vec<CurveRow> = summary
        .stability
        .per_step_psnr_mean
        .iter()
        .enumerate()
        .map(|(step, &psnr_mean)| CurveRow { step, psnr_mean })
        .collect();
    write_csv(&dir.join(format!("stability_{split}.csv")), &curve)?;
    json::write(&dir.join(format!("metrics_{split}.json")), summary)
}

pub fn trajectory_rows(record: &TrajectoryRecord) -> Vec<StepRow> {
    record
        .per_cascade_psnr
        .iter()
        .zip(&record.per_cascade_ssim)
        .enumerate()
        .map(|(step, (&psnr, &ssim))| StepRow { step, psnr, ssim })
        .collect()
}

/// Linear `[0, 1] -> [0, 255]` with clipping.
pub fn to_gray(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Tiles `[H, W]` images left to right.
pub fn strip(images: &[RealArray], map: impl Fn(f64) -> u8) -> Result<GrayImage> {
    let Some(first) = images.first() else {
        return Err(Error::Config("empty image strip".into()));
    };
    let (h, w) = (first.dims()[0], first.dims()[1]);
    let mut img = GrayImage::new((w * images.len()) as u32, h as u32);
    for (i, a) in images.iter().enumerate() {
        if a.dims() != [h, w] {
            return Err(Error::Config(format!("strip tile {i} is {:?}, expected [{h}, {w}]", a.dims())));
        }
        for r in 0..h {
            for c in 0..w {
                img.put_pixel((i * w + c) as u32, r as u32, image::Luma([map(a.data()[r * w + c])]));
            }
        }
    }
    Ok(img)
}

pub fn save_png(path: &Path, img: &GrayImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })
}

/// Magnitude images of every state followed by the ground truth, and the
/// matching squared-error maps scaled by `error_scale`.
pub fn trajectory_strips(record: &TrajectoryRecord, truth: &RealArray, error_scale: f64) -> Result<(GrayImage, GrayImage)> {
    let mut images = record.states.iter().map(magnitude_image).collect::<flat_core::Result<Vec<_>>>()?;
    let errors: Vec<RealArray> = images
        .iter()
        .map(|m| m.zip_map(truth, |a, b| (a - b) * (a - b) * error_scale))
        .collect::<flat_core::Result<_>>()?;
    images.push(truth.clone());
    Ok((strip(&images, to_gray)?, strip(&errors, to_gray)?))
}
