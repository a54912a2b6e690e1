//! Error growth under a constant bias injected into the decoder head.
//!
//! With ground truth held at `y0`, a head that is exact apart from a bias of
//! `delta` degrees per step accumulates `t * delta` of error under velocity
//! decoding but stays at a fixed `delta` offset under position decoding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::timestep::per_timestep_error;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, OutputParam, RolloutSpec, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub delta_deg: f64,
    /// Mean AE per sample index for each decoding.
    pub velocity_curve: Vec<f64>,
    pub position_curve: Vec<f64>,
    /// Least-squares slopes of the curves, degrees per second.
    pub velocity_slope_dps: f64,
    pub position_slope_dps: f64,
    /// `delta * rollout rate`.
    pub expected_slope_dps: f64,
}

impl DriftReport {
    pub fn velocity_slope_rel_error(&self) -> f64 {
        (self.velocity_slope_dps - self.expected_slope_dps).abs() / self.expected_slope_dps.abs()
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument("slope fit needs two or more paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope fit needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

/// Sets the head to emit a constant: `value_rad` before the output scalar.
fn pin_head(p: &mut ModelParams, cfg: &ModelConfig, value_rad: &[f64]) -> Result<()> {
    let missing = || Error::Config("model has no output head".into());
    p.get_mut("head.fc2.weight").ok_or_else(missing)?.data_mut().iter_mut().for_each(|w| *w = 0.0);
    let b = p.get_mut("head.fc2.bias").ok_or_else(missing)?;
    for (dst, v) in b.data_mut().iter_mut().zip(value_rad) {
        *dst = v / cfg.output_scalar;
    }
    Ok(())
}

/// Runs both decodings over `n_windows` random EMG windows of `samples`
/// samples with ground truth constant at `y0`.
pub fn drift_experiment(base: &ModelConfig, y0: &[f64], delta_deg: f64, samples: usize, n_windows: usize, seed: u64) -> Result<DriftReport> {
    if y0.len() != base.joints || n_windows == 0 {
        return Err(Error::InvalidArgument("drift experiment needs a full initial pose and at least one window".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emgs: Vec<Tensor> = (0..n_windows)
        .map(|_| {
            let n = base.emg_channels * samples;
            Tensor::matrix(base.emg_channels, samples, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        })
        .collect::<Result<_>>()?;
    let gt = Tensor::matrix(base.joints, samples, y0.iter().flat_map(|&v| std::iter::repeat_n(v, samples)).collect())?;
    let gts = vec![gt; n_windows];
    let masks = vec![vec![true; samples]; n_windows];
    let times: Vec<f64> = (0..samples).map(|n| n as f64 / base.emg_rate_hz).collect();

    let curve = |output_param: OutputParam| -> Result<Vec<f64>> {
        let cfg = ModelConfig { output_param, regression: false, ..base.clone() };
        let mut p = ModelParams::init(&cfg, seed)?;
        let head: Vec<f64> = match output_param {
            OutputParam::Velocity => vec![delta_deg.to_radians(); cfg.joints],
            OutputParam::Position => y0.iter().map(|v| (v + delta_deg).to_radians()).collect(),
        };
        pin_head(&mut p, &cfg, &head)?;
        let spec = RolloutSpec::new(Task::Tracking, output_param);
        let preds = emgs.iter().map(|x| p.predict_window(&cfg, x, Some(y0), &spec)).collect::<Result<Vec<_>>>()?;
        Ok(per_timestep_error(&preds, &gts, &masks)?.mean_ae)
    };
    let velocity_curve = curve(OutputParam::Velocity)?;
    let position_curve = curve(OutputParam::Position)?;
    Ok(DriftReport {
        delta_deg,
        velocity_slope_dps: fit_slope(&times, &velocity_curve)?,
        position_slope_dps: fit_slope(&times, &position_curve)?,
        expected_slope_dps: delta_deg * base.rollout_rate_hz,
        velocity_curve,
        position_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        assert!((fit_slope(&xs, &ys).unwrap() - 2.0).abs() < 1e-12);
        assert!(fit_slope(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn velocity_grows_and_position_stays_flat() {
        let cfg = ModelConfig::tiny();
        let r = drift_experiment(&cfg, &[10.0, 20.0, 30.0, 40.0], 0.2, 1600, 2, 1).unwrap();
        assert!(r.velocity_slope_rel_error() < 0.05, "{r:?}");
        assert!(r.position_slope_dps.abs() < 1e-9);
        assert!(r.position_curve.iter().all(|v| (v - 0.2).abs() < 1e-9));
        assert!(r.velocity_curve[0].abs() < 1e-12);
    }
}
