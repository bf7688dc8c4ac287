//! Training, evaluation and grid runs shared by the command line and the
//! acceptance suite.

use std::path::Path;

use flat_core::net::UnrolledModel;
use flat_core::phantom::{Sample, Split};
use flat_core::train::{
    ablation_label, evaluate_sample, psnr_curves, stability_report, train, zero_filled_summary, Evaluation,
    MetricsSummary, StabilityReport, TrainConfig, TrainOutcome,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{self, TrainingDoc};
use crate::config::{AblationOptions, VelocitySetting};
use crate::dataset::{prepare_output_dir, Dataset};
use crate::error::{Error, Result};
use crate::report::{self, EvalSummary};

pub const THREADS_ENV: &str = "FLAT_NUM_THREADS";

/// Runs `f` on a pool sized by `FLAT_NUM_THREADS` when it is set, otherwise
/// on rayon's global pool.
pub fn with_eval_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
            if n == 0 {
                return Err(Error::Config(format!("{THREADS_ENV} must be a positive integer")));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

/// Parallel over samples; results keep sample order, so the summary does
/// not depend on the thread count.
pub fn evaluate_parallel(model: &UnrolledModel, samples: &[Sample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let trajectories = with_eval_pool(|| {
        samples
            .par_iter()
            .map(|s| evaluate_sample(model, s))
            .collect::<flat_core::Result<Vec<_>>>()
    })??;
    let summary = MetricsSummary::from_records(&trajectories)?;
    Ok(Evaluation { summary, trajectories })
}

pub fn summarize(split: Split, evaluation: &Evaluation, samples: &[Sample]) -> Result<EvalSummary> {
    Ok(EvalSummary {
        split,
        metrics: evaluation.summary.clone(),
        zero_filled: zero_filled_summary(samples)?,
        stability: stability_report(&psnr_curves(&evaluation.trajectories))?,
    })
}

/// Evaluates `model` on one split and writes the metrics files into `dir`.
pub fn evaluate_to_dir(model: &UnrolledModel, data: &Dataset, split: Split, dir: &Path) -> Result<(EvalSummary, Evaluation)> {
    let samples = data.split(split);
    let evaluation = evaluate_parallel(model, samples)?;
    let summary = summarize(split, &evaluation, samples)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    report::write_evaluation(dir, &summary, &evaluation)?;
    Ok((summary, evaluation))
}

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LAST_GOOD_DIR: &str = "last_good";
pub const TRAINING_LOG: &str = "train_log.csv";

/// Trains on `data` and writes `train_log.csv` plus the best-validation
/// checkpoint under `dir`. On divergence the log and the last good
/// checkpoint (if any epoch completed) are still written before the error
/// is returned.
pub fn train_to_dir(cfg: &TrainConfig, data: &Dataset, dir: &Path, force: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    prepare_output_dir(dir, force)?;
    match train(cfg, &data.train, &data.val) {
        Ok(outcome) => {
            report::write_training_log(&dir.join(TRAINING_LOG), &outcome.log)?;
            let doc = TrainingDoc { config: cfg.clone(), best_epoch: outcome.best_epoch, best_val_psnr: outcome.best_val_psnr };
            checkpoint::save(&dir.join(CHECKPOINT_DIR), &outcome.model, cfg.seed, Some(doc), false)?;
            Ok(outcome)
        }
        Err(failure) => {
            report::write_training_log(&dir.join(TRAINING_LOG), &failure.log)?;
            if let Some(model) = &failure.last_good {
                checkpoint::save(&dir.join(LAST_GOOD_DIR), model, cfg.seed, None, false)?;
            }
            Err(failure.error.into())
        }
    }
}

/// One grid point of an ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub label: String,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grid {
    /// The four grounding x supervision combinations.
    Components,
    /// Velocity-loss norm and weight settings on the full method.
    Velocity,
}

pub fn grid_points(base: &TrainConfig, grid: Grid, options: &AblationOptions) -> Vec<GridPoint> {
    let points: Vec<GridPoint> = match grid {
        Grid::Components => flat_core::train::ABLATION_ROWS
            .iter()
            .map(|&(g, i)| {
                let mut config = base.clone().with_components(g, i);
                if !i {
                    config.w_velocity = 0.0;
                }
                GridPoint { label: ablation_label(g, i), config }
            })
            .collect(),
        Grid::Velocity => options
            .velocity_settings
            .iter()
            .map(|&VelocitySetting { norm, w_velocity }| GridPoint {
                label: format!("{norm:?}_w{w_velocity:e}").to_lowercase(),
                config: TrainConfig { velocity_norm: norm, w_velocity, ..base.clone() },
            })
            .collect(),
    };
    points
        .into_iter()
        .flat_map(|p| {
            options.replicates.iter().map(move |&seed| GridPoint {
                label: format!("{}_seed{seed}", p.label),
                config: TrainConfig { seed, ..p.config.clone() },
            })
        })
        .collect()
}

/// One line of the combined ablation CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub ground_parameters: bool,
    pub intermediate_supervision: bool,
    pub velocity_norm: String,
    pub w_velocity: f64,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_psnr: f64,
    pub test_psnr_mean: f64,
    pub test_psnr_std: f64,
    pub test_ssim_mean: f64,
    pub test_ssim_std: f64,
    pub n_decreasing_steps_mean: f64,
    pub max_drop_db: f64,
    pub monotone_fraction: f64,
}

impl AblationRow {
    pub fn new(point: &GridPoint, outcome: &TrainOutcome, test: &MetricsSummary, stability: &StabilityReport) -> Self {
        let c = &point.config;
        Self {
            label: point.label.clone(),
            ground_parameters: c.ground_parameters,
            intermediate_supervision: c.intermediate_supervision,
            velocity_norm: format!("{:?}", c.velocity_norm),
            w_velocity: c.w_velocity,
            seed: c.seed,
            best_epoch: outcome.best_epoch,
            best_val_psnr: outcome.best_val_psnr,
            test_psnr_mean: test.psnr_mean,
            test_psnr_std: test.psnr_std,
            test_ssim_mean: test.ssim_mean,
            test_ssim_std: test.ssim_std,
            n_decreasing_steps_mean: stability.n_decreasing_steps_mean,
            max_drop_db: stability.max_drop_db,
            monotone_fraction: stability.monotone_fraction,
        }
    }
}

pub const ABLATION_CSV: &str = "ablation.csv";

/// Trains one point into `dir/<label>` and evaluates it on the test split.
pub fn run_point(point: &GridPoint, data: &Dataset, dir: &Path) -> Result<AblationRow> {
    let run_dir = dir.join(&point.label);
    let outcome = train_to_dir(&point.config, data, &run_dir, false)?;
    let (summary, _) = evaluate_to_dir(&outcome.model, data, Split::Test, &run_dir)?;
    Ok(AblationRow::new(point, &outcome, &summary.metrics, &summary.stability))
}

/// Runs every point (in parallel across points) and writes the run
/// directories plus `ablation.csv`. Any failed run aborts the grid after the
/// others finish.
pub fn run_grid(points: &[GridPoint], data: &Dataset, dir: &Path, force: bool) -> Result<Vec<AblationRow>> {
    prepare_output_dir(dir, force)?;
    let rows = points
        .par_iter()
        .map(|p| run_point(p, data, dir))
        .collect::<Vec<Result<AblationRow>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    report::write_csv(&dir.join(ABLATION_CSV), &rows)?;
    Ok(rows)
}
