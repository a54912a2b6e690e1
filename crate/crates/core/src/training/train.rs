use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{lr_at, TaskMode, TrainConfig};
use super::loss::pose_loss_node;
use super::optim::{adamw_step, clip_grad_norm, AdamState};
use crate::analysis::mean_speed;
use crate::autodiff::{Graph, Var};
use crate::data::{mix_seed, rotate_channels, Window};
use crate::error::{Error, Result};
use crate::kinematics::HandModel;
use crate::model::{encode, rollout, Bound, ModelConfig, ModelParams, RolloutSpec, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean predicted speed on validation, deg/s.
    pub val_mean_speed: f64,
    /// Learning rate at the start of the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TaskMode,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Mean ground-truth speed over the validation windows, deg/s.
    pub gt_mean_speed: f64,
    /// Epoch with the lowest validation loss; its parameters are returned.
    pub best_epoch: usize,
    pub collapsed: bool,
    /// First epoch of the first qualifying low-speed run.
    pub collapse_start: Option<usize>,
}

impl TrainReport {
    pub fn final_speed_ratio(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.val_mean_speed / self.gt_mean_speed)
    }
}

pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub params: ModelParams,
    pub report: TrainReport,
}

/// Task rollouts for one window, upsampled to the window length.
pub struct Predictions {
    pub tracking: Option<Var>,
    pub regression: Option<Var>,
}

/// Encodes once and rolls out every task `mode` needs.
pub fn forward_tasks(g: &mut Graph, b: &Bound, cfg: &ModelConfig, emg: Var, y0: &[f64], mode: TaskMode) -> Result<Predictions> {
    let t = g.value(emg).dims2()?.1;
    let feats = encode(g, b, cfg, emg)?;
    let k = g.value(feats).dims2()?.1;
    let feats = g.interpolate_linear_time(feats, k * cfg.rollout_ratio())?;
    let run = |g: &mut Graph, task: Task| -> Result<Var> {
        let spec = RolloutSpec::new(task, cfg.output_param);
        let y = rollout(g, b, cfg, feats, Some(y0), &spec)?;
        g.interpolate_linear_time(y, t)
    };
    let tracking = if mode != TaskMode::SingleRegression { Some(run(g, Task::Tracking)?) } else { None };
    let regression = if mode != TaskMode::SingleTracking { Some(run(g, Task::Regression)?) } else { None };
    Ok(Predictions { tracking, regression })
}

/// Training objective for one window, plus the prediction whose speed is
/// monitored (Tracking unless the run is Regression-only).
fn window_objective(g: &mut Graph, b: &Bound, cfg: &ModelConfig, tc: &TrainConfig, hand: &HandModel, w: &Window, emg: Var, mode: TaskMode) -> Result<(Var, Var)> {
    let p = forward_tasks(g, b, cfg, emg, &w.y0, mode)?;
    let lw = tc.loss_weights();
    let loss_of = |g: &mut Graph, pred: Option<Var>| pred.map(|v| pose_loss_node(g, v, &w.pose, &w.mask, hand, &lw)).transpose();
    let lt = loss_of(g, p.tracking)?;
    let lr = loss_of(g, p.regression)?;
    let loss = match (mode, lt, lr) {
        (TaskMode::SingleTracking, Some(l), _) | (TaskMode::SingleRegression, _, Some(l)) => l,
        (TaskMode::Multitask, Some(a), Some(r)) => {
            let a = g.scale(a, tc.w_track)?;
            let r = g.scale(r, tc.w_reg)?;
            g.add(a, r)?
        }
        _ => unreachable!("forward_tasks produced the rollouts the mode asks for"),
    };
    let monitored = p.tracking.or(p.regression).expect("at least one task");
    Ok((loss, monitored))
}

/// First epoch of the earliest run of `min_run` consecutive epochs whose
/// speed is below `ratio * gt_speed`.
pub fn detect_collapse(speeds: &[f64], gt_speed: f64, ratio: f64, min_run: usize) -> Option<usize> {
    let mut run = 0;
    for (e, &s) in speeds.iter().enumerate() {
        run = if s < ratio * gt_speed { run + 1 } else { 0 };
        if run >= min_run.max(1) {
            return Some(e + 1 - run);
        }
    }
    None
}

fn check_mode(cfg: &ModelConfig, mode: TaskMode) -> Result<()> {
    if mode != TaskMode::SingleTracking && !cfg.regression {
        return Err(Error::Config(format!("{mode:?} training needs a model config with regression enabled")));
    }
    Ok(())
}

/// Validation loss and mean predicted speed, averaged over windows.
pub fn validate(params: &ModelParams, cfg: &ModelConfig, tc: &TrainConfig, mode: TaskMode, val: &[Window]) -> Result<(f64, f64)> {
    if val.is_empty() {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }
    let hand = HandModel::canonical();
    let (mut loss, mut speed) = (0.0, 0.0);
    for w in val {
        let mut g = Graph::new();
        let b = params.bind(&mut g, false)?;
        let x = g.constant(w.emg.clone())?;
        let (l, pred) = window_objective(&mut g, &b, cfg, tc, &hand, w, x, mode)?;
        loss += g.value(l).data()[0];
        speed += mean_speed(g.value(pred), cfg.emg_rate_hz)?;
    }
    Ok((loss / val.len() as f64, speed / val.len() as f64))
}

fn param_norms(params: &ModelParams) -> String {
    let parts: Vec<String> = params
        .params()
        .iter()
        .map(|p| format!("{}={:.6e}", p.name, p.value.data().iter().map(|v| v * v).sum::<f64>().sqrt()))
        .collect();
    parts.join(", ")
}

fn diverged(epoch: usize, what: String, params: &ModelParams) -> Error {
    Error::Divergence { epoch, detail: format!("{what}; parameter norms: {}", param_norms(params)) }
}

pub fn train(cfg: &ModelConfig, tc: &TrainConfig, mode: TaskMode, train: &[Window], val: &[Window], seed: u64) -> Result<TrainOutcome> {
    train_with_progress(cfg, tc, mode, train, val, seed, &mut |_| {})
}

/// Trains from a fresh initialization. Windows are shuffled each epoch and
/// optionally rotated by a channel offset in {-1, 0, 1}; gradients are
/// averaged over each batch, clipped, and applied with AdamW.
pub fn train_with_progress(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    mode: TaskMode,
    train: &[Window],
    val: &[Window],
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tc.validate()?;
    check_mode(cfg, mode)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    let hand = HandModel::canonical();
    let mut params = ModelParams::init(cfg, seed)?;
    let exclude: Vec<bool> = params.params().iter().map(|p| p.layer_norm).collect();
    let mut state = AdamState::new(params.params().iter().map(|p| p.value.numel()));
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x7472_6169_6e]));
    let gt_mean_speed = val.iter().map(|w| mean_speed(&w.pose, cfg.emg_rate_hz)).sum::<Result<f64>>()? / val.len() as f64;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let batches = train.len().div_ceil(tc.batch_size);
    let mut epochs = Vec::with_capacity(tc.epochs_total);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 0..tc.epochs_total {
        order.shuffle(&mut rng);
        let offsets: Vec<i64> = order.iter().map(|_| if tc.rotation_augmentation { rng.random_range(-1..=1) } else { 0 }).collect();
        let mut epoch_loss = 0.0;
        for (bi, chunk) in order.chunks(tc.batch_size).enumerate() {
            let lr = lr_at(epoch as f64 + bi as f64 / batches as f64, tc)?;
            let mut acc: Vec<Vec<f64>> = params.params().iter().map(|p| vec![0.0; p.value.numel()]).collect();
            let n = chunk.len() as f64;
            for (ci, &wi) in chunk.iter().enumerate() {
                let w = &train[wi];
                let emg = rotate_channels(&w.emg, offsets[bi * tc.batch_size + ci])?;
                let mut g = Graph::new();
                let b = params.bind(&mut g, true)?;
                let x = g.constant(emg)?;
                let step = window_objective(&mut g, &b, cfg, tc, &hand, w, x, mode).and_then(|(loss, _)| {
                    g.backward(loss)?;
                    Ok(g.value(loss).data()[0])
                });
                let value = match step {
                    Ok(v) => v,
                    Err(Error::NonFinite(what)) => {
                        return Err(diverged(epoch, format!("non-finite {what} on window {}@{}", w.session_id, w.start), &params));
                    }
                    Err(e) => return Err(e),
                };
                epoch_loss += value / train.len() as f64;
                for (a, v) in acc.iter_mut().zip(&b.vars) {
                    if let Some(gr) = g.grad(*v) {
                        a.iter_mut().zip(gr).for_each(|(a, g)| *a += g / n);
                    }
                }
            }
            let norm = clip_grad_norm(&mut acc, tc.clip_norm);
            if !norm.is_finite() {
                return Err(diverged(epoch, format!("gradient norm {norm} in batch {bi}"), &params));
            }
            let mut slices: Vec<&mut [f64]> = params.values_mut().map(|p| p.value.data_mut()).collect();
            adamw_step(&mut slices, &acc, &mut state, lr, tc.weight_decay, &exclude)?;
        }

        let (val_loss, val_mean_speed) = match validate(&params, cfg, tc, mode, val) {
            Err(Error::NonFinite(what)) => return Err(diverged(epoch, format!("non-finite {what} during validation"), &params)),
            r => r?,
        };
        if !val_loss.is_finite() || !epoch_loss.is_finite() {
            return Err(diverged(epoch, format!("loss train={epoch_loss} val={val_loss}"), &params));
        }
        let rec = EpochRecord { epoch, train_loss: epoch_loss, val_loss, val_mean_speed, lr: lr_at(epoch as f64, tc)? };
        on_epoch(&rec);
        epochs.push(rec);

        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    let speeds: Vec<f64> = epochs.iter().map(|e| e.val_mean_speed).collect();
    let collapse_start = detect_collapse(&speeds, gt_mean_speed, tc.collapse_ratio, tc.collapse_epochs);
    Ok(TrainOutcome {
        params: best_params,
        report: TrainReport {
            mode,
            seed,
            epochs,
            gt_mean_speed,
            best_epoch,
            collapsed: collapse_start.is_some(),
            collapse_start,
        },
    })
}
