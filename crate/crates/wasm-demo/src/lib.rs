//! Browser bindings for three cheap pieces of the pipeline: a synthetic
//! joint trace with decoder-like jitter, the speed-adaptive filter and its
//! smoothness/accuracy frontier, and hand forward kinematics.
//!
//! Everything here is a plain function over `f64` slices so it runs the
//! same natively (tests) and in the browser.

use emgpose::analysis::{angular_error, mean_speed};
use emgpose::autodiff::Tensor;
use emgpose::data::{generate_session, SyntheticConfig};
use emgpose::filtering::{filter_trajectory, FilterParams};
use emgpose::kinematics::{pad_pose, HandModel, NUM_DOFS};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wasm_bindgen::prelude::*;

/// Rate of the traces handed to the page; the generator runs at 2 kHz.
pub const TRACE_RATE_HZ: f64 = 100.0;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn row(values: &[f64]) -> Result<Tensor, JsError> {
    Tensor::matrix(1, values.len(), values.to_vec()).map_err(js)
}

#[wasm_bindgen]
pub fn trace_rate_hz() -> f64 {
    TRACE_RATE_HZ
}

/// Ground-truth angle of one joint from a synthetic session, degrees,
/// decimated to `TRACE_RATE_HZ`.
#[wasm_bindgen]
pub fn synthetic_joint(seed: u32, stage: usize, joint: usize, seconds: f64) -> Result<Vec<f64>, JsError> {
    let cfg = SyntheticConfig { duration_s: seconds, mask_dropout_rate: 0.0, ..SyntheticConfig::tiny() };
    if stage >= cfg.n_stages || joint >= cfg.joints {
        return Err(JsError::new(&format!("stage < {} and joint < {} required", cfg.n_stages, cfg.joints)));
    }
    let s = generate_session(&cfg, 0, stage, 0, seed as u64).map_err(js)?;
    let step = (cfg.sample_rate_hz / TRACE_RATE_HZ).round() as usize;
    Ok(s.joint_angles.row(joint).iter().step_by(step).copied().collect())
}

/// `values` plus white Gaussian jitter of `sd_deg`, standing in for a noisy
/// decoder output.
#[wasm_bindgen]
pub fn add_jitter(values: &[f64], sd_deg: f64, seed: u32) -> Result<Vec<f64>, JsError> {
    let n = Normal::new(0.0, sd_deg).map_err(js)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    Ok(values.iter().map(|v| v + n.sample(&mut rng)).collect())
}

/// Filters one trace with strength `beta` and sample period `te` seconds.
#[wasm_bindgen]
pub fn filter(values: &[f64], beta: f64, te: f64) -> Result<Vec<f64>, JsError> {
    let p = FilterParams::new(beta, te).map_err(js)?;
    Ok(filter_trajectory(&row(values)?, &p).map_err(js)?.data().to_vec())
}

/// For each beta: `[beta, mean speed deg/s, AE deg]`, flattened. The first
/// triple is the unfiltered trace, with beta reported as NaN.
#[wasm_bindgen]
pub fn frontier(noisy: &[f64], truth: &[f64], betas: &[f64], te: f64) -> Result<Vec<f64>, JsError> {
    if noisy.len() != truth.len() {
        return Err(JsError::new("noisy and truth traces differ in length"));
    }
    let gt = row(truth)?;
    let mask = vec![true; truth.len()];
    let rate = 1.0 / te;
    let raw = row(noisy)?;
    let mut out = vec![f64::NAN, mean_speed(&raw, rate).map_err(js)?, angular_error(&raw, &gt, &mask).map_err(js)?];
    for &b in betas {
        let y = filter_trajectory(&raw, &FilterParams::new(b, te).map_err(js)?).map_err(js)?;
        out.extend([b, mean_speed(&y, rate).map_err(js)?, angular_error(&y, &gt, &mask).map_err(js)?]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn dof_count() -> usize {
    NUM_DOFS
}

/// 21 landmarks (wrist, then MCP/PIP/DIP/tip per finger) as flat xyz in mm.
/// Missing trailing angles are zero.
#[wasm_bindgen]
pub fn fk_landmarks(pose_deg: &[f64]) -> Result<Vec<f64>, JsError> {
    let pose = pad_pose(pose_deg).map_err(js)?;
    let pts = HandModel::canonical().fk_landmarks(&pose).map_err(js)?;
    Ok(pts.iter().flatten().copied().collect())
}
