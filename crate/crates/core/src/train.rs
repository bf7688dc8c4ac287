//! Training, evaluation and cascade-stability analysis.
//!
//! The per-sample objective is `1 - SSIM` of the final magnitude image,
//! plus `w_velocity` times the summed per-cascade velocity losses when
//! intermediate supervision is on. Training is sequential over
//! minibatches; gradients within a batch are summed in index order.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::array::RealArray;
use crate::autodiff::{adamw_step, AdamW, NodeId, OptimizerState, Tape};
use crate::error::{config_err, domain_err, Error, Result};
use crate::flow::{flat_loss, ideal_state, ideal_velocity, predicted_velocity, velocity_loss, CascadeSchedule, VelocityNorm, VelocityPair};
use crate::grid::ComplexGrid;
use crate::metrics::{psnr, ssim, ssim_loss, ssim_loss_on_tape, SsimConfig};
use crate::net::{forward_unrolled, unrolled_on_tape, ModelOptions, Observation, UnrolledModel};
use crate::phantom::{magnitude_image, Sample};
use crate::rng::Rng;

/// Both metrics use a unit data range: phantoms live in `[0, 1]`.
pub const DATA_RANGE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub cascades: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub w_velocity: f64,
    pub velocity_norm: VelocityNorm,
    pub weight_sharing: bool,
    /// Step sizes and regularizer weight from the schedule (fixed) rather
    /// than learned from 1.0.
    pub ground_parameters: bool,
    /// Add the per-cascade velocity losses to the objective.
    pub intermediate_supervision: bool,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            cascades: 12,
            alpha: 4.0,
            sigma: 1.0,
            w_velocity: 1e-4,
            velocity_norm: VelocityNorm::L1,
            weight_sharing: false,
            ground_parameters: true,
            intermediate_supervision: true,
            lr: 1e-3,
            epochs: 50,
            batch_size: 1,
            seed: 0,
            hidden: 16,
        }
    }
}

/// `(ground_parameters, intermediate_supervision)` for the four component
/// combinations: neither, grounding only, supervision only, both.
pub const ABLATION_ROWS: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];

impl TrainConfig {
    /// Unrolled network with learned step sizes and final-image loss only.
    pub fn baseline() -> Self {
        Self {
            w_velocity: 0.0,
            ground_parameters: false,
            intermediate_supervision: false,
            ..Self::default()
        }
    }

    pub fn with_components(mut self, ground_parameters: bool, intermediate_supervision: bool) -> Self {
        self.ground_parameters = ground_parameters;
        self.intermediate_supervision = intermediate_supervision;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config_err!("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch size must be >= 1"));
        }
        if self.hidden == 0 {
            return Err(config_err!("hidden width must be >= 1"));
        }
        if !(self.w_velocity >= 0.0) || !self.w_velocity.is_finite() {
            return Err(config_err!("w_velocity must be >= 0, got {}", self.w_velocity));
        }
        AdamW::new(self.lr).validate()?;
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<CascadeSchedule> {
        CascadeSchedule::constant_lambda(self.cascades, self.alpha, 1.0, self.sigma)
    }

    pub fn initial_model(&self) -> Result<UnrolledModel> {
        UnrolledModel::standard(
            self.schedule()?,
            ModelOptions {
                hidden: self.hidden,
                weight_sharing: self.weight_sharing,
                grounded: self.ground_parameters,
                seed: self.seed,
            },
        )
    }

    /// Intermediate target state after cascade `k`: the straight-line
    /// interpolant at `t_{k+1}` when grounded, otherwise the ground truth.
    fn target(&self, sample: &Sample, schedule: &CascadeSchedule, k: usize) -> Result<ComplexGrid> {
        if self.ground_parameters {
            ideal_state(&sample.x0, &sample.x1, schedule.t()[k + 1])
        } else {
            Ok(sample.x1.clone())
        }
    }
}

/// Objective terms for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub velocity_sum: f64,
}

/// Objective of a recorded trajectory `x_0..x_K`, without the tape.
pub fn objective(states: &[ComplexGrid], sample: &Sample, schedule: &CascadeSchedule, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let k = schedule.cascades();
    if states.len() != k + 1 {
        return Err(Error::Contract(alloc::format!("{} states for {k} cascades", states.len())));
    }
    let truth = sample.ground_truth()?;
    let recon = ssim_loss(&truth, &magnitude_image(&states[k])?)?;
    if !cfg.intermediate_supervision {
        return Ok(LossBreakdown { total: recon, recon, velocity_sum: 0.0 });
    }
    let t = schedule.t();
    let mut losses = Vec::with_capacity(k);
    for j in 0..k {
        // without grounding both interpolation endpoints are the ground truth
        let start = if cfg.ground_parameters { &sample.x0 } else { &sample.x1 };
        let ideal = ideal_velocity(&states[j], start, &sample.x1, t[j], t[j + 1])?;
        let predicted = predicted_velocity(&states[j], &states[j + 1], t[j], t[j + 1])?;
        let pair = VelocityPair { ideal, predicted, step_index: j };
        losses.push(velocity_loss(&pair, cfg.velocity_norm)?);
    }
    let mut velocity_sum = 0.0;
    for l in &losses {
        velocity_sum += l;
    }
    Ok(LossBreakdown {
        total: flat_loss(recon, &losses, cfg.w_velocity)?,
        recon,
        velocity_sum,
    })
}

struct LossNodes {
    total: NodeId,
    recon: NodeId,
    velocity_sum: Option<NodeId>,
}

fn record_objective(
    tape: &mut Tape,
    states: &[NodeId],
    sample: &Sample,
    schedule: &CascadeSchedule,
    cfg: &TrainConfig,
) -> Result<LossNodes> {
    let k = schedule.cascades();
    let truth = tape.constant(sample.ground_truth()?)?;
    let image = tape.ifft2c(states[k])?;
    let magnitude = tape.magnitude(image)?;
    let recon = ssim_loss_on_tape(tape, truth, magnitude, &SsimConfig::default())?;
    if !cfg.intermediate_supervision {
        return Ok(LossNodes { total: recon, recon, velocity_sum: None });
    }
    let delta = schedule.delta();
    let mut sum: Option<NodeId> = None;
    for j in 0..k {
        let target = tape.constant(cfg.target(sample, schedule, j)?.to_channels())?;
        let inv = 1.0 / delta[j];
        let ideal = tape.sub(target, states[j])?;
        let ideal = tape.scale(ideal, inv)?;
        let predicted = tape.sub(states[j + 1], states[j])?;
        let predicted = tape.scale(predicted, inv)?;
        let gap = tape.sub(ideal, predicted)?;
        let gap = match cfg.velocity_norm {
            VelocityNorm::L1 => tape.abs(gap)?,
            VelocityNorm::L2 => tape.square(gap)?,
        };
        let loss = tape.reduce_mean(gap)?;
        sum = Some(match sum {
            None => loss,
            Some(s) => tape.add(s, loss)?,
        });
    }
    let velocity_sum = sum.expect("at least one cascade");
    let weighted = tape.scale(velocity_sum, cfg.w_velocity)?;
    let total = tape.add(recon, weighted)?;
    Ok(LossNodes { total, recon, velocity_sum: Some(velocity_sum) })
}

/// Loss and parameter gradients (in [`UnrolledModel::parameters`] order)
/// for one sample.
pub fn sample_gradients(model: &UnrolledModel, sample: &Sample, cfg: &TrainConfig) -> Result<(LossBreakdown, Vec<RealArray>)> {
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape, true)?;
    let obs = Observation::bind(&mut tape, &sample.y, &sample.mask)?;
    let states = unrolled_on_tape(&mut tape, obs, model, &binding)?;
    let nodes = record_objective(&mut tape, &states, sample, model.schedule(), cfg)?;
    let mut grads = tape.backward(nodes.total)?;
    let gradients = binding.collect_gradients(&mut grads, model);
    if gradients.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let value = |id: NodeId| tape.value(id).data()[0];
    let loss = LossBreakdown {
        total: value(nodes.total),
        recon: value(nodes.recon),
        velocity_sum: nodes.velocity_sum.map_or(0.0, value),
    };
    Ok((loss, gradients))
}

/// One row of the training log, averaged over the epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub loss_total: f64,
    pub loss_recon: f64,
    pub loss_velocity_sum: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the best validation PSNR (earliest epoch on ties).
    pub model: UnrolledModel,
    pub best_epoch: usize,
    pub best_val_psnr: f64,
    pub log: Vec<EpochLog>,
}

/// Training stopped early. `last_good` is the best model of the completed
/// epochs, if any.
#[derive(Debug, Clone)]
pub struct TrainFailure {
    pub error: Error,
    pub last_good: Option<UnrolledModel>,
    pub log: Vec<EpochLog>,
}

impl From<Error> for TrainFailure {
    fn from(error: Error) -> Self {
        Self { error, last_good: None, log: Vec::new() }
    }
}

const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4521;

pub fn train(cfg: &TrainConfig, train_set: &[Sample], val_set: &[Sample]) -> Result<TrainOutcome, TrainFailure> {
    train_with_progress(cfg, train_set, val_set, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    cfg: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainFailure> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(config_err!("training and validation sets must be nonempty").into());
    }
    let optimizer = AdamW::new(cfg.lr);
    let mut model = cfg.initial_model()?;
    let mut states: Vec<OptimizerState> = model.parameters().iter().map(|p| OptimizerState::new(p.len())).collect();
    let mut rng = Rng::new(cfg.seed ^ SHUFFLE_STREAM);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(UnrolledModel, usize, f64)> = None;
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        let fail = |error: Error, best: &Option<(UnrolledModel, usize, f64)>, log: &Vec<EpochLog>| TrainFailure {
            error,
            last_good: best.as_ref().map(|b| b.0.clone()),
            log: log.clone(),
        };
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        rng.shuffle(&mut order);
        let mut sums = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut total: Option<Vec<RealArray>> = None;
            for &i in batch {
                let (loss, grads) = match sample_gradients(&model, &train_set[i], cfg) {
                    Ok(v) => v,
                    Err(e) => return Err(fail(e, &best, &log)),
                };
                sums.0 += loss.total;
                sums.1 += loss.recon;
                sums.2 += loss.velocity_sum;
                total = Some(match total {
                    None => grads,
                    Some(mut acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.add_assign(g);
                        }
                        acc
                    }
                });
            }
            let mut grads = total.expect("nonempty batch");
            if batch.len() > 1 {
                let scale = 1.0 / batch.len() as f64;
                grads = grads.iter().map(|g| g.map(|v| v * scale)).collect();
            }
            let mut params = model.parameters();
            for ((p, g), s) in params.iter_mut().zip(&grads).zip(&mut states) {
                if let Err(e) = adamw_step(p, g, s, &optimizer) {
                    return Err(fail(e, &best, &log));
                }
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(fail(Error::NonFinite("parameter update"), &best, &log));
            }
            if let Err(e) = model.set_parameters(params) {
                return Err(fail(e, &best, &log));
            }
            step += 1;
        }
        let val = match evaluate_final(&model, val_set) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, &best, &log)),
        };
        let n = train_set.len() as f64;
        let row = EpochLog {
            epoch,
            step,
            loss_total: sums.0 / n,
            loss_recon: sums.1 / n,
            loss_velocity_sum: sums.2 / n,
            val_psnr: val.psnr_mean,
            val_ssim: val.ssim_mean,
        };
        on_epoch(&row);
        log.push(row);
        if best.as_ref().map_or(true, |b| val.psnr_mean > b.2) {
            best = Some((model.clone(), epoch, val.psnr_mean));
        }
    }
    let (model, best_epoch, best_val_psnr) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, best_epoch, best_val_psnr, log })
}

/// Intermediate reconstructions of one sample with their metrics against
/// the sample's ground-truth magnitude image.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub states: Vec<ComplexGrid>,
    pub per_cascade_psnr: Vec<f64>,
    pub per_cascade_ssim: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn from_states(states: Vec<ComplexGrid>, truth: &RealArray) -> Result<Self> {
        let mut per_cascade_psnr = Vec::with_capacity(states.len());
        let mut per_cascade_ssim = Vec::with_capacity(states.len());
        for s in &states {
            let image = magnitude_image(s)?;
            per_cascade_psnr.push(psnr(truth, &image, DATA_RANGE)?);
            per_cascade_ssim.push(ssim(truth, &image, DATA_RANGE)?);
        }
        Ok(Self { states, per_cascade_psnr, per_cascade_ssim })
    }

    pub fn final_psnr(&self) -> f64 {
        *self.per_cascade_psnr.last().expect("nonempty trajectory")
    }

    pub fn final_ssim(&self) -> f64 {
        *self.per_cascade_ssim.last().expect("nonempty trajectory")
    }
}

pub fn evaluate_sample(model: &UnrolledModel, sample: &Sample) -> Result<TrajectoryRecord> {
    let states = forward_unrolled(&sample.y, &sample.mask, model)?;
    TrajectoryRecord::from_states(states, &sample.ground_truth()?)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsSummary {
    pub count: usize,
    pub psnr_mean: f64,
    /// Sample standard deviation (`n - 1` denominator; 0 for one sample).
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mut sum = 0.0;
    for x in v {
        sum += x;
    }
    let mean = sum / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let mut ss = 0.0;
    for x in v {
        ss += (x - mean) * (x - mean);
    }
    (mean, libm::sqrt(ss / (n - 1.0)))
}

impl MetricsSummary {
    pub fn from_values(psnr: Vec<f64>, ssim: Vec<f64>) -> Result<Self> {
        if psnr.is_empty() || psnr.len() != ssim.len() {
            return Err(domain_err!("need equally many PSNR and SSIM values, at least one"));
        }
        let (psnr_mean, psnr_std) = mean_std(&psnr);
        let (ssim_mean, ssim_std) = mean_std(&ssim);
        Ok(Self { count: psnr.len(), psnr_mean, psnr_std, ssim_mean, ssim_std, psnr, ssim })
    }

    /// Final-state metrics of each record, in order.
    pub fn from_records(records: &[TrajectoryRecord]) -> Result<Self> {
        Self::from_values(
            records.iter().map(TrajectoryRecord::final_psnr).collect(),
            records.iter().map(TrajectoryRecord::final_ssim).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub summary: MetricsSummary,
    pub trajectories: Vec<TrajectoryRecord>,
}

/// Reconstructs every sample and records its full trajectory.
pub fn evaluate(model: &UnrolledModel, samples: &[Sample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(domain_err!("nothing to evaluate"));
    }
    let trajectories = samples.iter().map(|s| evaluate_sample(model, s)).collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { summary: MetricsSummary::from_records(&trajectories)?, trajectories })
}

fn evaluate_final(model: &UnrolledModel, samples: &[Sample]) -> Result<MetricsSummary> {
    let mut psnrs = Vec::with_capacity(samples.len());
    let mut ssims = Vec::with_capacity(samples.len());
    for s in samples {
        let states = forward_unrolled(&s.y, &s.mask, model)?;
        let truth = s.ground_truth()?;
        let image = magnitude_image(states.last().expect("nonempty"))?;
        psnrs.push(psnr(&truth, &image, DATA_RANGE)?);
        ssims.push(ssim(&truth, &image, DATA_RANGE)?);
    }
    MetricsSummary::from_values(psnrs, ssims)
}

/// Metrics of the zero-filled estimates `x0`.
pub fn zero_filled_summary(samples: &[Sample]) -> Result<MetricsSummary> {
    let mut psnrs = Vec::with_capacity(samples.len());
    let mut ssims = Vec::with_capacity(samples.len());
    for s in samples {
        let truth = s.ground_truth()?;
        let image = magnitude_image(&s.x0)?;
        psnrs.push(psnr(&truth, &image, DATA_RANGE)?);
        ssims.push(ssim(&truth, &image, DATA_RANGE)?);
    }
    MetricsSummary::from_values(psnrs, ssims)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StabilityReport {
    /// Mean over samples of the number of transitions `k -> k+1` whose PSNR
    /// drops by more than the tolerance.
    pub n_decreasing_steps_mean: f64,
    /// Largest single-transition PSNR drop over all samples, in dB (0 if
    /// nothing drops).
    pub max_drop_db: f64,
    /// Fraction of samples without a decreasing transition.
    pub monotone_fraction: f64,
    pub per_step_psnr_mean: Vec<f64>,
}

/// Stability of per-cascade PSNR curves, counting any strict decrease.
pub fn stability_report(curves: &[Vec<f64>]) -> Result<StabilityReport> {
    stability_report_with_tolerance(curves, 0.0)
}

/// As [`stability_report`], but a transition only counts as decreasing
/// when it loses more than `tolerance_db`.
pub fn stability_report_with_tolerance(curves: &[Vec<f64>], tolerance_db: f64) -> Result<StabilityReport> {
    let Some(first) = curves.first() else {
        return Err(domain_err!("no trajectories"));
    };
    let len = first.len();
    if len == 0 || curves.iter().any(|c| c.len() != len) {
        return Err(domain_err!("trajectories must be nonempty and equally long"));
    }
    if !(tolerance_db >= 0.0) {
        return Err(config_err!("tolerance must be >= 0"));
    }
    let mut decreasing_total = 0usize;
    let mut monotone = 0usize;
    let mut max_drop = 0.0f64;
    let mut per_step = vec![0.0; len];
    for curve in curves {
        let mut count = 0;
        for w in curve.windows(2) {
            let drop = w[0] - w[1];
            if drop > tolerance_db {
                count += 1;
            }
            max_drop = max_drop.max(drop);
        }
        decreasing_total += count;
        if count == 0 {
            monotone += 1;
        }
        for (acc, v) in per_step.iter_mut().zip(curve) {
            *acc += v;
        }
    }
    let n = curves.len() as f64;
    Ok(StabilityReport {
        n_decreasing_steps_mean: decreasing_total as f64 / n,
        max_drop_db: max_drop,
        monotone_fraction: monotone as f64 / n,
        per_step_psnr_mean: per_step.into_iter().map(|s| s / n).collect(),
    })
}

/// PSNR curves of a set of trajectories.
pub fn psnr_curves(records: &[TrajectoryRecord]) -> Vec<Vec<f64>> {
    records.iter().map(|r| r.per_cascade_psnr.clone()).collect()
}

/// Human-readable name of a component combination.
pub fn ablation_label(ground_parameters: bool, intermediate_supervision: bool) -> String {
    let mark = |b: bool| if b { "on" } else { "off" };
    alloc::format!("grounding-{}_supervision-{}", mark(ground_parameters), mark(intermediate_supervision))
}
