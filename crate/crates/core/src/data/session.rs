use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{shape_err, Error, Result};

/// One recording: EMG, joint angles in degrees and the per-sample validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub user_id: String,
    pub stage_id: String,
    pub sample_rate_hz: f64,
    /// `[C, T]`, arbitrary units.
    pub emg: Tensor,
    /// `[J, T]`, degrees.
    pub joint_angles: Tensor,
    pub valid_mask: Vec<bool>,
}

impl Session {
    pub fn new(
        session_id: String,
        user_id: String,
        stage_id: String,
        sample_rate_hz: f64,
        emg: Tensor,
        joint_angles: Tensor,
        valid_mask: Vec<bool>,
    ) -> Result<Self> {
        let (_, t) = emg.dims2()?;
        let (_, tj) = joint_angles.dims2()?;
        if emg.shape().len() != 2 || joint_angles.shape().len() != 2 || tj != t || valid_mask.len() != t {
            return Err(shape_err(format!(
                "session {session_id}: emg {:?}, joints {:?}, mask {}",
                emg.shape(),
                joint_angles.shape(),
                valid_mask.len()
            )));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidArgument(format!("session {session_id}: sample rate must be positive")));
        }
        if !emg.is_finite() || !joint_angles.is_finite() {
            return Err(Error::NonFinite(format!("session {session_id}")));
        }
        Ok(Self { session_id, user_id, stage_id, sample_rate_hz, emg, joint_angles, valid_mask })
    }

    pub fn samples(&self) -> usize {
        self.valid_mask.len()
    }

    pub fn channels(&self) -> usize {
        self.emg.shape()[0]
    }

    pub fn joints(&self) -> usize {
        self.joint_angles.shape()[0]
    }
}

/// Converts a third-party recording into a [`Session`].
///
/// Implement this for a dataset's native record type to feed it through
/// windowing, training and evaluation unchanged.
pub trait SessionConverter {
    type Recording;

    fn convert(&self, recording: &Self::Recording) -> Result<Session>;
}

/// A recording already held as channel-major arrays.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RawRecording {
    pub id: String,
    pub user: String,
    pub stage: String,
    pub sample_rate_hz: f64,
    pub emg: Vec<Vec<f64>>,
    pub joint_angles_deg: Vec<Vec<f64>>,
    /// Missing means every sample is valid.
    pub valid: Option<Vec<bool>>,
}

/// Converter for [`RawRecording`]; rejects ragged channels.
#[derive(Clone, Copy, Debug, Default)]
pub struct RawConverter;

impl SessionConverter for RawConverter {
    type Recording = RawRecording;

    fn convert(&self, r: &RawRecording) -> Result<Session> {
        let to_matrix = |rows: &[Vec<f64>], what: &str| -> Result<Tensor> {
            let t = rows.first().map(Vec::len).unwrap_or(0);
            if rows.is_empty() || rows.iter().any(|row| row.len() != t) {
                return Err(shape_err(format!("{}: ragged or empty {what}", r.id)));
            }
            Tensor::matrix(rows.len(), t, rows.concat())
        };
        let emg = to_matrix(&r.emg, "emg")?;
        let joints = to_matrix(&r.joint_angles_deg, "joint angles")?;
        let mask = r.valid.clone().unwrap_or_else(|| vec![true; emg.shape()[1]]);
        Session::new(r.id.clone(), r.user.clone(), r.stage.clone(), r.sample_rate_hz, emg, joints, mask)
    }
}
