use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    SingleTracking,
    SingleRegression,
    Multitask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_total: usize,
    pub warmup_epochs: usize,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub lambda_tip: f64,
    pub tip_subsample: usize,
    pub batch_size: usize,
    pub w_track: f64,
    pub w_reg: f64,
    pub window_s: f64,
    pub train_hop_s: f64,
    pub eval_hop_s: f64,
    pub rotation_augmentation: bool,
    /// Collapse: validation speed below `collapse_ratio` of ground truth ...
    pub collapse_ratio: f64,
    /// ... for this many consecutive epochs.
    pub collapse_epochs: usize,
}

impl TrainConfig {
    pub fn full() -> Self {
        Self {
            epochs_total: 150,
            warmup_epochs: 10,
            lr_start: 1e-8,
            lr_peak: 1e-3,
            lr_end: 1e-6,
            weight_decay: 1e-2,
            clip_norm: 1.0,
            lambda_tip: 0.01,
            tip_subsample: 25,
            batch_size: 8,
            w_track: 0.875,
            w_reg: 0.125,
            window_s: 5.0,
            train_hop_s: 2.5,
            eval_hop_s: 5.0,
            rotation_augmentation: true,
            collapse_ratio: 0.1,
            collapse_epochs: 5,
        }
    }

    pub fn desk() -> Self {
        Self { epochs_total: 30, warmup_epochs: 3, ..Self::full() }
    }

    pub fn tiny() -> Self {
        Self { batch_size: 4, ..Self::desk() }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda_tip: self.lambda_tip, tip_subsample: self.tip_subsample }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train config: {m}")));
        if self.epochs_total == 0 || self.warmup_epochs >= self.epochs_total {
            return bad("need 0 <= warmup_epochs < epochs_total");
        }
        if !(self.lr_start >= 0.0 && self.lr_peak >= 0.0 && self.lr_end >= 0.0) {
            return bad("learning rates must be >= 0");
        }
        if !(self.weight_decay >= 0.0) || !(self.clip_norm > 0.0) || !(self.lambda_tip >= 0.0) {
            return bad("weight decay and lambda_tip must be >= 0, clip norm > 0");
        }
        if self.tip_subsample == 0 || self.batch_size == 0 || self.collapse_epochs == 0 {
            return bad("tip_subsample, batch_size and collapse_epochs must be positive");
        }
        if !(self.w_track >= 0.0 && self.w_reg >= 0.0) || (self.w_track + self.w_reg - 1.0).abs() > 1e-12 {
            return bad("task weights must be >= 0 and sum to 1");
        }
        if !(self.window_s > 0.0 && self.train_hop_s > 0.0 && self.eval_hop_s > 0.0) {
            return bad("window and hops must be positive");
        }
        Ok(())
    }
}

/// Learning rate at a (fractional) epoch: linear warmup from `lr_start` to
/// `lr_peak`, then a half cosine down to `lr_end` at `epochs_total`.
pub fn lr_at(epoch: f64, cfg: &TrainConfig) -> Result<f64> {
    let total = cfg.epochs_total as f64;
    let warm = cfg.warmup_epochs as f64;
    if !(0.0..=total).contains(&epoch) || warm >= total {
        return Err(Error::InvalidArgument(format!("epoch {epoch} outside [0, {total}]")));
    }
    if epoch <= warm && warm > 0.0 {
        return Ok(cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * epoch / warm);
    }
    let frac = (epoch - warm) / (total - warm);
    Ok(cfg.lr_end + (cfg.lr_peak - cfg.lr_end) * 0.5 * (1.0 + (PI * frac).cos()))
}
