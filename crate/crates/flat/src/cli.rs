//! `flat` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use flat_core::oracle::{verify_correspondence, VerificationReport};
use flat_core::phantom::Split;

use crate::config::ExperimentConfig;
use crate::dataset::{check_dataset, load_dataset, make_dataset, prepare_output_dir};
use crate::error::{Error, Result};
use crate::experiment::{self, Grid};
use crate::{checkpoint, json, report};

/// Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
/// 4 I/O error.
#[derive(Debug, Parser)]
#[command(name = "flat", version, about = "Flow-aligned training of unrolled MRI reconstruction networks")]
pub struct Cli {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the data root seed, the training seed and the verification seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replace a nonempty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridArg {
    Components,
    Velocity,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the phantom dataset into --out.
    GenData,
    /// Reload a dataset and check every sample.
    CheckData {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train on a dataset; writes the log and best checkpoint into --out.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint on one split; writes metrics into --out.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Per-cascade metrics and image strips of one sample.
    Trajectory {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        sample: usize,
    },
    /// Check cascades against forward Euler on the analytic flow.
    VerifyOde,
    /// Train and evaluate every point of a grid.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "components")]
        grid: GridArg,
    },
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let cfg = cfg.with_seed(cli.seed);
    cfg.validate()?;
    Ok(cfg)
}

pub fn verification_text(r: &VerificationReport) -> String {
    let verdict = |b: bool| if b { "PASS" } else { "FAIL" };
    let mut s = String::new();
    s += &format!("max per-step discrepancy  {:.3e}  [{}]\n", r.max_step_discrepancy, verdict(r.step_pass));
    s += &format!("convergence slope         {:.4} (instances {:.4}..{:.4})  [{}]\n", r.slope, r.slope_min, r.slope_max, verdict(r.slope_pass));
    for (k, e) in r.config.cascades.iter().zip(&r.global_errors) {
        s += &format!("  K={k:<4} global error {e:.6e}\n");
    }
    s += &format!("rk4 reference error       {:.3e}\n", r.rk4_max_error);
    s += &format!("energy monotone           {}\n", r.energy_monotone);
    s += &format!("decoupled                 {}\n", r.decoupled);
    s += &format!("overall                   {}\n", verdict(r.passed));
    s
}

/// Runs one command and returns the summary line printed on success.
pub fn execute(cli: &Cli) -> Result<String> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenData => {
            let out = out_dir(cli)?;
            let m = make_dataset(out, &cfg.data, cli.force)?;
            Ok(format!(
                "wrote {} train / {} val / {} test samples to {}",
                m.counts.train,
                m.counts.val,
                m.counts.test,
                out.display()
            ))
        }
        Command::CheckData { data } => {
            let report = check_dataset(data)?;
            if report.ok() {
                Ok(format!("{} samples ok", report.samples))
            } else {
                let (split, i, why) = &report.failures[0];
                Err(Error::format(
                    data,
                    format!("{} of {} samples failed; first: {} #{i}: {why}", report.failures.len(), report.samples, split.name()),
                ))
            }
        }
        Command::Train { data } => {
            let out = out_dir(cli)?;
            let dataset = load_dataset(data)?;
            let outcome = experiment::train_to_dir(&cfg.train, &dataset, out, cli.force)?;
            cfg.save(&out.join("config.json"))?;
            Ok(format!(
                "best epoch {} with validation PSNR {:.3} dB; checkpoint in {}",
                outcome.best_epoch,
                outcome.best_val_psnr,
                out.join(experiment::CHECKPOINT_DIR).display()
            ))
        }
        Command::Eval { checkpoint, data, split } => {
            let out = out_dir(cli)?;
            let (model, _) = checkpoint::load(checkpoint)?;
            let dataset = load_dataset(data)?;
            prepare_output_dir(out, cli.force)?;
            let (summary, _) = experiment::evaluate_to_dir(&model, &dataset, (*split).into(), out)?;
            Ok(format!(
                "{}: PSNR {:.3} +/- {:.3} dB, SSIM {:.4} +/- {:.4}, zero-filled PSNR {:.3} dB, decreasing steps {:.3}",
                Split::from(*split).name(),
                summary.metrics.psnr_mean,
                summary.metrics.psnr_std,
                summary.metrics.ssim_mean,
                summary.metrics.ssim_std,
                summary.zero_filled.psnr_mean,
                summary.stability.n_decreasing_steps_mean
            ))
        }
        Command::Trajectory { checkpoint, data, split, sample } => {
            let out = out_dir(cli)?;
            let (model, _) = checkpoint::load(checkpoint)?;
            let dataset = load_dataset(data)?;
            let split: Split = (*split).into();
            let samples = dataset.split(split);
            let s = samples.get(*sample).ok_or_else(|| {
                Error::Config(format!("sample {sample} out of range ({} in {})", samples.len(), split.name()))
            })?;
            let record = flat_core::train::evaluate_sample(&model, s)?;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let stem = format!("trajectory_{}_{sample}", split.name());
            report::write_csv(&out.join(format!("{stem}.csv")), &report::trajectory_rows(&record))?;
            let (strip, errors) = report::trajectory_strips(&record, &s.ground_truth()?, cfg.eval.error_map_scale)?;
            report::save_png(&out.join(format!("{stem}.png")), &strip)?;
            report::save_png(&out.join(format!("{stem}_error.png")), &errors)?;
            Ok(format!(
                "PSNR {:.3} -> {:.3} dB over {} cascades",
                record.per_cascade_psnr[0],
                record.final_psnr(),
                record.states.len() - 1
            ))
        }
        Command::VerifyOde => {
            let report = verify_correspondence(&cfg.verify)?;
            if let Some(out) = &cli.out {
                std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                json::write(&out.join("verification.json"), &report)?;
            }
            Ok(verification_text(&report))
        }
        Command::Ablate { data, grid } => {
            let out = out_dir(cli)?;
            let dataset = load_dataset(data)?;
            let grid = match grid {
                GridArg::Components => Grid::Components,
                GridArg::Velocity => Grid::Velocity,
            };
            let points = experiment::grid_points(&cfg.train, grid, &cfg.ablation);
            let rows = experiment::run_grid(&points, &dataset, out, cli.force)?;
            let mut text = String::new();
            for r in &rows {
                text += &format!("{:<44} test PSNR {:.3} dB  decreasing steps {:.3}\n", r.label, r.test_psnr_mean, r.n_decreasing_steps_mean);
            }
            Ok(text)
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Messages go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(msg) => {
            println!("{}", msg.trim_end());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
