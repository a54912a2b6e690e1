use super::session::Session;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// A fixed-length slice of a session.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub session_id: String,
    pub user_id: String,
    pub stage_id: String,
    /// Offset of the first sample in the source session.
    pub start: usize,
    pub emg: Tensor,
    pub pose: Tensor,
    pub mask: Vec<bool>,
    /// Ground-truth pose at the first valid sample, degrees.
    pub y0: Vec<f64>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

fn slice_cols(t: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (rows, cols) = t.dims2()?;
    let mut out = Vec::with_capacity(rows * len);
    for r in 0..rows {
        out.extend_from_slice(&t.data()[r * cols + start..r * cols + start + len]);
    }
    Tensor::matrix(rows, len, out)
}

/// Number of windows `floor((T - W) / H) + 1` before skipping fully masked ones.
pub fn window_count(samples: usize, window: usize, hop: usize) -> usize {
    if window == 0 || hop == 0 || window > samples {
        0
    } else {
        (samples - window) / hop + 1
    }
}

/// Slices a session into windows of `window_s` seconds every `hop_s` seconds.
/// Windows with no valid sample are dropped.
pub fn windows(session: &Session, window_s: f64, hop_s: f64) -> Result<Vec<Window>> {
    let rate = session.sample_rate_hz;
    let w = (window_s * rate).round() as usize;
    let h = (hop_s * rate).round() as usize;
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument(format!("window {window_s}s / hop {hop_s}s too short at {rate} Hz")));
    }
    if w > session.samples() {
        return Err(Error::InvalidArgument(format!(
            "window of {w} samples exceeds session {} of {} samples",
            session.session_id,
            session.samples()
        )));
    }
    let mut out = Vec::new();
    for k in 0..window_count(session.samples(), w, h) {
        let start = k * h;
        let mask = session.valid_mask[start..start + w].to_vec();
        let Some(first) = mask.iter().position(|&m| m) else { continue };
        let pose = slice_cols(&session.joint_angles, start, w)?;
        let j = pose.shape()[0];
        let y0 = (0..j).map(|r| pose.data()[r * w + first]).collect();
        out.push(Window {
            session_id: session.session_id.clone(),
            user_id: session.user_id.clone(),
            stage_id: session.stage_id.clone(),
            start,
            emg: slice_cols(&session.emg, start, w)?,
            pose,
            mask,
            y0,
        });
    }
    Ok(out)
}

/// Rotates the electrode ring: output channel `c` reads input channel `c - offset` (mod C).
pub fn rotate_channels(emg: &Tensor, offset: i64) -> Result<Tensor> {
    let (c, t) = emg.dims2()?;
    if c == 0 {
        return Ok(emg.clone());
    }
    let shift = offset.rem_euclid(c as i64) as usize;
    let mut out = vec![0.0; c * t];
    for dst in 0..c {
        let src = (dst + c - shift) % c;
        out[dst * t..(dst + 1) * t].copy_from_slice(&emg.data()[src * t..(src + 1) * t]);
    }
    Tensor::new(emg.shape().to_vec(), out)
}
