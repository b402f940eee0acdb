//! Deterministic training and evaluation orchestration: Adam with decoupled
//! weight decay, early stopping with best-epoch restoration, seeded
//! augmentation, and the metric-suite evaluation driver.
//!
//! Every stochastic choice draws from a stream derived from
//! `(seed, purpose, epoch, index)`, and per-window work is reduced in window
//! order, so runs are bit-reproducible — including under the optional
//! `parallel` feature, which fans the per-window forward/backward passes out
//! to a thread pool without changing any result.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{AdamConfig, Mode, NodeId, ParamStore, Tape, Tensor};
use crate::dataio::{select_orientation, ImuSequence, Phase, PolicyError, SequenceError};
use crate::losses::{self, LossError, MultiTaskParams};
use crate::metrics::{self, MetricConfig, MetricError, MetricReport, WindowEstimate};
use crate::model::{CtinModel, ForwardOutput, ModelConfig, ModelError, BN_MOMENTUM};
use crate::pipeline::{self, BiasFrame, Window, WindowError};
use crate::rng;

/// Which training objective drives the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LossKind {
    Mse,
    Ivl,
    Cnl,
    /// Multi-task combination of IVL and CNL with learned observation noises.
    IvlCnl,
}

/// Train/validate/test fractions; must sum to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitRatios {
    pub train: f64,
    pub validate: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, validate: 0.1, test: 0.1 }
    }
}

/// Training configuration. Optimizer defaults: lr 0.0005, weight decay 1e-6,
/// betas (0.9, 0.999), eps 1e-8, patience 30, gradient clip 10.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss_kind: LossKind,
    pub rng_seed: u64,
    pub split: SplitRatios,
    /// Sliding-window step; `None` uses the per-dataset policy (20 for OxIOD,
    /// 50 for RIDI, 10 otherwise).
    pub window_step: Option<usize>,
    /// Random-shift bound for training windows; `None` means `step − 1`.
    pub random_shift_max: Option<usize>,
    pub grad_clip: f64,
    /// Yaw rotation and bias perturbation on training windows.
    pub augment: bool,
    pub bias_frame: BiasFrame,
    /// Optional per-epoch cap on training windows (seeded subsample).
    pub max_windows_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            max_epochs: 100,
            patience: 30,
            loss_kind: LossKind::IvlCnl,
            rng_seed: 0,
            split: SplitRatios::default(),
            window_step: None,
            random_shift_max: None,
            grad_clip: 10.0,
            augment: true,
            bias_frame: BiasFrame::Navigation,
            max_windows_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::Config("learning rate must be positive"));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be at least 1"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(TrainError::Config("batch size and epoch budget must be positive"));
        }
        let sum = self.split.train + self.split.validate + self.split.test;
        if crate::fm::abs(sum - 1.0) > 1e-9 {
            return Err(TrainError::Config("split ratios must sum to 1"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One epoch's record. Wall time is informational and is deliberately left
/// out of serialized histories so identical runs produce identical files.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum StopReason {
    MaxEpochs,
    EarlyStopped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch].val_loss
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
    #[error("the {phase:?} split is empty ({total} sequences total)")]
    EmptySplit { phase: Phase, total: usize },
    #[error("non-finite loss {loss} at epoch {epoch}; training diverged")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Instrumentation points used by tests; default methods are no-ops.
pub trait TrainHooks {
    /// After augmentation, before the forward pass.
    fn on_train_window(&mut self, _epoch: usize, _window: &Window) {}
    /// Once per validation pass with the flags it ran under.
    fn on_validation(&mut self, _epoch: usize, _mode: Mode, _augmented: bool) {}
    fn on_epoch_end(&mut self, _epoch: usize, _train_loss: f64, _val_loss: f64) {}
}

/// The default, silent instrumentation.
pub struct NoHooks;

impl TrainHooks for NoHooks {}

/// Named sequences forming one dataset.
pub type Dataset = Vec<(String, ImuSequence)>;

/// Index split over a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validate: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffle sequence indices with the seed and cut by the ratios. Every phase
/// mustend up non-empty.
pub fn split_dataset(n: usize, ratios: SplitRatios, seed: u64) -> Result<Split, TrainError> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::stream(seed, stream_tag(Purpose::SplitShuffle, 0, 0)), &mut idx);
    let n_train = ((n as f64) * ratios.train).round() as usize;
    let n_val = ((n as f64) * ratios.validate).round() as usize;
    let n_train = n_train.min(n);
    let n_val = n_val.min(n - n_train);
    let split = Split {
        train: idx[..n_train].to_vec(),
        validate: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    };
    for (phase, part) in [
        (Phase::Train, &split.train),
        (Phase::Validate, &split.validate),
        (Phase::Test, &split.test),
    ] {
        if part.is_empty() {
            return Err(TrainError::EmptySplit { phase, total: n });
        }
    }
    Ok(split)
}

/// Early-stopping policy: the best epoch is the strict minimum of the
/// validation curve seen so far; training stops once `patience` consecutive
/// epochs have failed to improve on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EarlyStop {
    pub best_epoch: usize,
    pub should_stop: bool,
}

pub fn early_stop(val_losses: &[f64], patience: usize) -> EarlyStop {
    assert!(!val_losses.is_empty(), "need at least one recorded epoch");
    let mut best_epoch = 0usize;
    for (e, &v) in val_losses.iter().enumerate() {
        if v < val_losses[best_epoch] {
            best_epoch = e;
        }
    }
    let last = val_losses.len() - 1;
    EarlyStop { best_epoch, should_stop: last - best_epoch >= patience }
}

/// RNG stream namespaces.
#[derive(Clone, Copy)]
enum Purpose {
    SplitShuffle = 1,
    WindowShift = 2,
    EpochShuffle = 3,
    Augment = 4,
    Dropout = 5,
    Subsample = 6,
}

fn stream_tag(p: Purpose, epoch: usize, index: usize) -> u64 {
    ((p as u64) << 56) ^ ((epoch as u64) << 32) ^ index as u64
}

fn policy_step(dataset_kind: &str) -> usize {
    match dataset_kind.to_lowercase().as_str() {
        "oxiod" => 20,
        "ridi" => 50,
        _ => 10,
    }
}

struct WindowPass {
    grads: BTreeMap<String, Tensor>,
    bn_updates: Vec<(String, crate::autodiff::BnStats)>,
    loss: f64,
}

fn build_loss(
    tape: &mut Tape,
    fwd: &ForwardOutput,
    window: &Window,
    kind: LossKind,
    bound: &BTreeMap<String, NodeId>,
) -> Result<NodeId, LossError> {
    let gt_vel = tape.constant(window.gt_vel.clone());
    let gt_pos = tape.constant(window.gt_pos.clone());
    match kind {
        LossKind::Mse => losses::mse_loss(tape, fwd.vel, gt_vel),
        LossKind::Ivl => losses::ivl(tape, fwd.vel, gt_vel, gt_pos, window.dt),
        LossKind::Cnl => losses::cnl(tape, fwd.vel, fwd.cov, gt_vel),
        LossKind::IvlCnl => {
            let lv = losses::ivl(tape, fwd.vel, gt_vel, gt_pos, window.dt)?;
            let lc = losses::cnl(tape, fwd.vel, fwd.cov, gt_vel)?;
            let mt = MultiTaskParams::mounted(bound)?;
            losses::multitask_loss(tape, lv, lc, mt)
        }
    }
}

fn forward_loss(
    model: &CtinModel,
    store: &ParamStore,
    window: &Window,
    kind: LossKind,
    mode: Mode,
    dropout_rng: &mut rng::DetRng,
    want_grads: bool,
) -> Result<WindowPass, TrainError> {
    let mut tape = Tape::new();
    let bound = store.mount(&mut tape);
    let imu = tape.constant(window.imu.clone());
    let fwd = model.forward_on_tape(&mut tape, store, &bound, imu, mode, dropout_rng)?;
    let loss = build_loss(&mut tape, &fwd, window, kind, &bound)?;
    let loss_val = tape.value(loss).scalar_value();
    let mut grads = BTreeMap::new();
    if want_grads {
        tape.backward(loss).map_err(LossError::Autodiff)?;
        grads = store.collect_grads(&tape, &bound);
    }
    Ok(WindowPass { grads, bn_updates: fwd.bn_updates, loss: loss_val })
}

#[cfg(feature = "parallel")]
fn run_batch(
    model: &CtinModel,
    store: &ParamStore,
    jobs: Vec<(u64, Window)>,
    kind: LossKind,
    seed: u64,
    epoch: usize,
) -> Vec<Result<WindowPass, TrainError>> {
    use rayon::prelude::*;
    jobs.into_par_iter()
        .map(|(widx, w)| {
            let mut drng = rng::stream(seed, stream_tag(Purpose::Dropout, epoch, widx as usize));
            forward_loss(model, store, &w, kind, Mode::Train, &mut drng, true)
        })
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_batch(
    model: &CtinModel,
    store: &ParamStore,
    jobs: Vec<(u64, Window)>,
    kind: LossKind,
    seed: u64,
    epoch: usize,
) -> Vec<Result<WindowPass, TrainError>> {
    jobs.into_iter()
        .map(|(widx, w)| {
            let mut drng = rng::stream(seed, stream_tag(Purpose::Dropout, epoch, widx as usize));
            forward_loss(model, store, &w, kind, Mode::Train, &mut drng, true)
        })
        .collect()
}

/// Train a model on a dataset: split by the configured ratios, augment and
/// optimize per epoch, validate with dropout disabled and no augmentation,
/// stop early on the patience rule, and return the best-epoch parameters.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    dataset: &Dataset,
    hooks: &mut dyn TrainHooks,
) -> Result<(ParamStore, TrainHistory), TrainError> {
    cfg.validate()?;
    let model = CtinModel::new(model_cfg.clone())?;
    let mut store = model.init_params(cfg.rng_seed);
    MultiTaskParams::register(&mut store);

    let split = split_dataset(dataset.len(), cfg.split, cfg.rng_seed)?;
    let prepare = |indices: &[usize], phase: Phase| -> Result<Vec<ImuSequence>, TrainError> {
        indices
            .iter()
            .map(|&i| {
                let (_, seq) = &dataset[i];
                let source = select_orientation(&seq.meta.dataset_kind, phase)?;
                Ok(seq.with_orientation_source(source)?)
            })
            .collect()
    };
    let train_seqs = prepare(&split.train, Phase::Train)?;
    let val_seqs = prepare(&split.validate, Phase::Validate)?;

    let m = model_cfg.window_len;
    let step = cfg.window_step.unwrap_or_else(|| policy_step(&dataset[0].1.meta.dataset_kind));
    let shift_max = cfg.random_shift_max.unwrap_or(step.saturating_sub(1)).min(step.saturating_sub(1));

    // Validation windows are fixed: no shift, no augmentation.
    let mut val_windows = Vec::new();
    for seq in &val_seqs {
        let mut dummy = rng::stream(cfg.rng_seed, stream_tag(Purpose::WindowShift, usize::MAX, 0));
        val_windows.extend(pipeline::make_windows(seq, m, step, 0, &mut dummy)?);
    }
    if val_windows.is_empty() {
        return Err(TrainError::EmptySplit { phase: Phase::Validate, total: dataset.len() });
    }

    let mut history = TrainHistory { epochs: Vec::new(), best_epoch: 0, stop_reason: StopReason::MaxEpochs };
    let mut best_snapshot = store.snapshot_values();
    let mut step_count: u64 = 0;
    let adam = cfg.adam();

    for epoch in 0..cfg.max_epochs {
        #[cfg(feature = "std")]
        let epoch_start = std::time::Instant::now();

        // Fresh training windows each epoch: the random shift re-slices the
        // sequences, which is part of the augmentation story.
        let mut windows = Vec::new();
        for (sidx, seq) in train_seqs.iter().enumerate() {
            let mut shift_rng = rng::stream(cfg.rng_seed, stream_tag(Purpose::WindowShift, epoch, sidx));
            windows.extend(pipeline::make_windows(seq, m, step, shift_max, &mut shift_rng)?);
        }
        if windows.is_empty() {
            return Err(TrainError::EmptySplit { phase: Phase::Train, total: dataset.len() });
        }
        if let Some(cap) = cfg.max_windows_per_epoch {
            if windows.len() > cap {
                rng::shuffle(
                    &mut rng::stream(cfg.rng_seed, stream_tag(Purpose::Subsample, epoch, 0)),
                    &mut windows,
                );
                windows.truncate(cap);
            }
        }
        rng::shuffle(
            &mut rng::stream(cfg.rng_seed, stream_tag(Purpose::EpochShuffle, epoch, 0)),
            &mut windows,
        );

        let mut train_loss_acc = 0.0;
        let mut seen = 0usize;
        let mut widx: u64 = 0;
        for chunk in windows.chunks(cfg.batch_size) {
            // Augment serially (hooks observe the exact training inputs),
            // then run the heavy passes, then reduce in window order.
            let mut jobs = Vec::with_capacity(chunk.len());
            for w in chunk {
                let mut arng =
                    rng::stream(cfg.rng_seed, stream_tag(Purpose::Augment, epoch, widx as usize));
                let prepared = if cfg.augment {
                    let theta = rng::uniform(&mut arng, 0.0, 2.0 * core::f64::consts::PI);
                    let rotated = pipeline::augment_yaw(w, theta);
                    pipeline::perturb_bias(&rotated, &mut arng, cfg.bias_frame)
                } else {
                    w.clone()
                };
                hooks.on_train_window(epoch, &prepared);
                jobs.push((widx, prepared));
                widx += 1;
            }
            let results = run_batch(&model, &store, jobs, cfg.loss_kind, cfg.rng_seed, epoch);

            let mut mean_grads: BTreeMap<String, Tensor> = BTreeMap::new();
            let inv = 1.0 / results.len() as f64;
            for res in results {
                let pass = res?;
                if !pass.loss.is_finite() {
                    return Err(TrainError::Diverged { epoch, loss: pass.loss });
                }
                train_loss_acc += pass.loss;
                seen += 1;
                for (name, mut g) in pass.grads {
                    g.scale_assign(inv);
                    match mean_grads.get_mut(&name) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            mean_grads.insert(name, g);
                        }
                    }
                }
                store.apply_bn_updates(&pass.bn_updates, BN_MOMENTUM);
            }
            ParamStore::clip_grads(&mut mean_grads, cfg.grad_clip);
            step_count += 1;
            store.adam_step(&mean_grads, &adam, step_count);
        }
        let train_loss = train_loss_acc / seen.max(1) as f64;

        // Validation: eval mode, no augmentation, no parameter updates.
        hooks.on_validation(epoch, Mode::Eval, false);
        let mut val_acc = 0.0;
        for w in &val_windows {
            let mut drng = rng::stream(cfg.rng_seed, stream_tag(Purpose::Dropout, usize::MAX, 0));
            let pass = forward_loss(&model, &store, w, cfg.loss_kind, Mode::Eval, &mut drng, false)?;
            val_acc += pass.loss;
        }
        let val_loss = val_acc / val_windows.len() as f64;
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, loss: val_loss });
        }

        #[cfg(feature = "std")]
        let wall = epoch_start.elapsed().as_secs_f64();
        #[cfg(not(feature = "std"))]
        let wall = 0.0;
        history.epochs.push(EpochRecord { train_loss, val_loss, wall_time_s: wall });
        hooks.on_epoch_end(epoch, train_loss, val_loss);

        let val_curve: Vec<f64> = history.epochs.iter().map(|e| e.val_loss).collect();
        let decision = early_stop(&val_curve, cfg.patience);
        if decision.best_epoch == epoch {
            best_snapshot = store.snapshot_values();
        }
        history.best_epoch = decision.best_epoch;
        if decision.should_stop {
            history.stop_reason = StopReason::EarlyStopped;
            break;
        }
    }

    store.restore_values(&best_snapshot);
    Ok((store, history))
}

/// One sequence's evaluation record.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SequenceEval {
    pub name: String,
    pub report: MetricReport,
}

/// Full evaluation output for one method over a set of sequences.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub method: String,
    pub dataset_kind: String,
    pub per_sequence: Vec<SequenceEval>,
    /// Mean over sequences, per metric (relative metrics average the
    /// sequences where they exist).
    pub aggregate: MetricReport,
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for v in values.flatten() {
        acc += v;
        n += 1;
    }
    (n > 0).then(|| acc / n as f64)
}

/// Aggregate per-sequence reports by the mean.
pub fn aggregate_reports(reports: &[MetricReport]) -> MetricReport {
    let n = reports.len().max(1) as f64;
    MetricReport {
        ate_m: reports.iter().map(|r| r.ate_m).sum::<f64>() / n,
        t_rte_m: mean_opt(reports.iter().map(|r| r.t_rte_m)),
        d_rte_m: mean_opt(reports.iter().map(|r| r.d_rte_m)),
        pde: reports.iter().map(|r| r.pde).sum::<f64>() / n,
        velocity_mse: mean_opt(reports.iter().map(|r| r.velocity_mse)),
    }
}

/// Metrics of a predicted trajectory against a sequence's ground truth; the
/// relative metrics degrade to `None` when the sequence is too short for the
/// configured interval or distance.
pub fn score_trajectory(
    seq: &ImuSequence,
    pred: &crate::baselines::Trajectory,
    metric_cfg: &MetricConfig,
    velocity_mse: Option<f64>,
) -> Result<MetricReport, MetricError> {
    let gt = crate::baselines::Trajectory {
        timestamps: seq.timestamps.clone(),
        positions: seq.gt_positions.clone(),
    };
    let ate = metrics::ate(&gt, pred, metric_cfg.rmse)?;
    let t_rte = match metrics::t_rte(&gt, pred, metric_cfg.t_rte_seconds, seq.meta.sample_rate_hz, metric_cfg.rmse)
    {
        Ok(v) => Some(v),
        Err(MetricError::TooShortForInterval { .. }) => None,
        Err(e) => return Err(e),
    };
    let d_rte = match metrics::d_rte(&gt, pred, metric_cfg.d_rte_meters, metric_cfg.rmse) {
        Ok(v) => Some(v),
        Err(MetricError::PathTooShort { .. }) => None,
        Err(e) => return Err(e),
    };
    let pde = metrics::pde(&gt, pred)?;
    Ok(MetricReport { ate_m: ate, t_rte_m: t_rte, d_rte_m: d_rte, pde, velocity_mse })
}

/// Evaluation window starts: regular tiling at `step` plus a final window so
/// the whole sequence is covered.
fn eval_starts(seq_len: usize, window_len: usize, step: usize) -> Vec<usize> {
    let last = seq_len - window_len;
    let mut starts: Vec<usize> = (0..=last).step_by(step.max(1)).collect();
    if *starts.last().unwrap() != last {
        starts.push(last);
    }
    starts
}

/// Run the model over every test sequence: windows without augmentation,
/// evaluation-mode forward passes, overlap-averaged stitching, metrics, and
/// the stitched-velocity MSE.
pub fn evaluate(
    model_cfg: &ModelConfig,
    store: &ParamStore,
    sequences: &[(String, ImuSequence)],
    metric_cfg: &MetricConfig,
) -> Result<EvalReport, TrainError> {
    let model = CtinModel::new(model_cfg.clone())?;
    let m = model_cfg.window_len;
    let step = (m / 2).max(1);
    let mut per_sequence = Vec::with_capacity(sequences.len());
    let mut kinds = alloc::collections::BTreeSet::new();

    for (name, raw) in sequences {
        kinds.insert(raw.meta.dataset_kind.clone());
        let source = select_orientation(&raw.meta.dataset_kind, Phase::Test)?;
        let seq = raw.with_orientation_source(source)?;
        let starts = eval_starts(seq.len(), m, step);

        #[cfg(feature = "parallel")]
        let estimates: Vec<WindowEstimate> = {
            use rayon::prelude::*;
            starts
                .par_iter()
                .map(|&start| {
                    let w = pipeline::extract_window(&seq, start, m)?;
                    let est = model.predict(store, &w)?;
                    Ok(WindowEstimate { origin_index: start, vel: est.vel })
                })
                .collect::<Result<Vec<_>, TrainError>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let estimates: Vec<WindowEstimate> = starts
            .iter()
            .map(|&start| {
                let w = pipeline::extract_window(&seq, start, m)?;
                let est = model.predict(store, &w)?;
                Ok(WindowEstimate { origin_index: start, vel: est.vel })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;

        let stitched = metrics::stitch_velocities(&estimates, seq.len())?;
        let (gt_vel, _) = pipeline::window_ground_truth(&seq, 0, seq.len(), seq.dt())?;
        let vel_mse = stitched
            .data()
            .iter()
            .zip(gt_vel.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / stitched.numel() as f64;
        let p0 = [seq.gt_positions[0].x, seq.gt_positions[0].y];
        let pred = metrics::integrate_velocity(&stitched, p0, seq.dt(), seq.timestamps[0]);
        let report = score_trajectory(&seq, &pred, metric_cfg, Some(vel_mse))?;
        per_sequence.push(SequenceEval { name: name.clone(), report });
    }

    let aggregate = aggregate_reports(&per_sequence.iter().map(|s| s.report.clone()).collect::<Vec<_>>());
    let dataset_kind = kinds.into_iter().collect::<Vec<_>>().join("+");
    Ok(EvalReport { method: "ctin".into(), dataset_kind, per_sequence, aggregate })
}
