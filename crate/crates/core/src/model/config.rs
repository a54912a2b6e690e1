use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Ground-truth initial pose is given.
    Tracking,
    /// Pose from EMG alone, starting from the learned initial pose.
    Regression,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Tracking => "tracking",
            Task::Regression => "regression",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputParam {
    /// Head output is the pose.
    Position,
    /// Head output is the per-step pose increment.
    Velocity,
}

impl OutputParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutputParam::Position => "position",
            OutputParam::Velocity => "velocity",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPoseSource {
    GroundTruth,
    LearnedVector,
}

/// How one window is decoded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutSpec {
    pub task: Task,
    pub output_param: OutputParam,
    /// Span of the position warm start; only used by Regression with Velocity.
    pub hybrid_warm_start_ms: f64,
}

pub const DEFAULT_WARM_START_MS: f64 = 250.0;

impl RolloutSpec {
    pub fn new(task: Task, output_param: OutputParam) -> Self {
        Self { task, output_param, hybrid_warm_start_ms: DEFAULT_WARM_START_MS }
    }

    pub fn initial_pose_source(&self) -> InitialPoseSource {
        match self.task {
            Task::Tracking => InitialPoseSource::GroundTruth,
            Task::Regression => InitialPoseSource::LearnedVector,
        }
    }

    pub fn hybrid(&self) -> bool {
        self.task == Task::Regression && self.output_param == OutputParam::Velocity
    }

    /// Number of leading rollout steps decoded by the position head.
    pub fn warm_start_steps(&self, rollout_rate_hz: f64) -> usize {
        if !self.hybrid() {
            return 0;
        }
        // Steps t with t / rate <= warm start, i.e. t = 0..=floor(ms * rate / 1000).
        (self.hybrid_warm_start_ms * rollout_rate_hz / 1000.0 + 1e-9).floor() as usize + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// A strided subsampling conv followed by `blocks` TDS blocks. Each block is
/// `x = LN(x + leaky(dwconv(x)))` then `x = LN(x + W2 leaky(W1 x))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdsStageSpec {
    pub subsample_kernel: usize,
    pub subsample_stride: usize,
    pub channels: usize,
    pub blocks: usize,
    pub block_kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub emg_channels: usize,
    pub joints: usize,
    pub emg_rate_hz: f64,
    pub conv: Vec<ConvSpec>,
    pub tds: Vec<TdsStageSpec>,
    pub feature_dim: usize,
    pub feature_rate_hz: f64,
    pub rollout_rate_hz: f64,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    /// Width of the output MLP's hidden layer.
    pub head_hidden: usize,
    pub output_scalar: f64,
    pub output_param: OutputParam,
    /// Adds the learned initial pose, and for velocity models the position
    /// head, so the model can run Regression rollouts.
    pub regression: bool,
    pub leaky_slope: f64,
}

impl ModelConfig {
    pub fn full() -> Self {
        Self {
            emg_channels: 16,
            joints: 20,
            emg_rate_hz: 2000.0,
            conv: vec![
                ConvSpec { out_channels: 256, kernel: 11, stride: 5 },
                ConvSpec { out_channels: 256, kernel: 5, stride: 2 },
            ],
            tds: vec![
                TdsStageSpec { subsample_kernel: 17, subsample_stride: 4, channels: 64, blocks: 2, block_kernel: 5 },
                TdsStageSpec { subsample_kernel: 9, subsample_stride: 2, channels: 64, blocks: 2, block_kernel: 5 },
            ],
            feature_dim: 64,
            feature_rate_hz: 25.0,
            rollout_rate_hz: 50.0,
            lstm_layers: 2,
            lstm_hidden: 512,
            head_hidden: 512,
            output_scalar: 1.0,
            output_param: OutputParam::Position,
            regression: false,
            leaky_slope: 0.01,
        }
    }

    pub fn desk() -> Self {
        Self {
            emg_channels: 8,
            joints: 8,
            conv: vec![
                ConvSpec { out_channels: 32, kernel: 11, stride: 5 },
                ConvSpec { out_channels: 32, kernel: 5, stride: 2 },
            ],
            tds: vec![
                TdsStageSpec { subsample_kernel: 17, subsample_stride: 4, channels: 32, blocks: 1, block_kernel: 5 },
                TdsStageSpec { subsample_kernel: 9, subsample_stride: 2, channels: 32, blocks: 1, block_kernel: 5 },
            ],
            feature_dim: 32,
            lstm_hidden: 64,
            head_hidden: 64,
            ..Self::full()
        }
    }

    /// Small enough to train many seeds on one core.
    pub fn tiny() -> Self {
        Self {
            emg_channels: 4,
            joints: 4,
            conv: vec![
                ConvSpec { out_channels: 16, kernel: 11, stride: 5 },
                ConvSpec { out_channels: 16, kernel: 5, stride: 2 },
            ],
            tds: vec![
                TdsStageSpec { subsample_kernel: 9, subsample_stride: 4, channels: 16, blocks: 1, block_kernel: 3 },
                TdsStageSpec { subsample_kernel: 5, subsample_stride: 2, channels: 16, blocks: 1, block_kernel: 3 },
            ],
            feature_dim: 16,
            lstm_layers: 1,
            lstm_hidden: 16,
            head_hidden: 16,
            ..Self::full()
        }
    }

    /// Smallest config with the full layer structure, for gradient checks.
    pub fn grad_check() -> Self {
        Self {
            emg_channels: 2,
            joints: 3,
            conv: vec![ConvSpec { out_channels: 3, kernel: 3, stride: 5 }, ConvSpec { out_channels: 3, kernel: 2, stride: 2 }],
            tds: vec![
                TdsStageSpec { subsample_kernel: 3, subsample_stride: 4, channels: 4, blocks: 1, block_kernel: 2 },
                TdsStageSpec { subsample_kernel: 2, subsample_stride: 2, channels: 4, blocks: 1, block_kernel: 2 },
            ],
            feature_dim: 4,
            lstm_layers: 2,
            lstm_hidden: 8,
            head_hidden: 5,
            ..Self::full()
        }
    }

    pub fn total_stride(&self) -> usize {
        self.conv.iter().map(|c| c.stride).chain(self.tds.iter().map(|s| s.subsample_stride)).product()
    }

    /// Rollout steps per feature frame.
    pub fn rollout_ratio(&self) -> usize {
        (self.rollout_rate_hz / self.feature_rate_hz).round() as usize
    }

    pub fn feature_frames(&self, samples: usize) -> Result<usize> {
        let s = self.total_stride();
        if samples == 0 || samples % s != 0 {
            return Err(Error::InvalidArgument(format!("window of {samples} samples is not a multiple of the total stride {s}")));
        }
        let k = samples / s;
        if k < 2 {
            return Err(Error::InvalidArgument(format!("window of {samples} samples yields {k} feature frame(s); need at least 2")));
        }
        Ok(k)
    }

    pub fn rollout_steps(&self, samples: usize) -> Result<usize> {
        Ok(self.feature_frames(samples)? * self.rollout_ratio())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model config: {m}")));
        if self.emg_channels == 0 || self.joints == 0 || self.joints > crate::kinematics::NUM_DOFS {
            return bad(format!("need C >= 1 and 1 <= J <= 20, got C={} J={}", self.emg_channels, self.joints));
        }
        if self.conv.is_empty() && self.tds.is_empty() {
            return bad("encoder has no layers".into());
        }
        if self.conv.iter().any(|c| c.out_channels == 0 || c.kernel == 0 || c.stride == 0)
            || self.tds.iter().any(|s| s.channels == 0 || s.subsample_kernel == 0 || s.subsample_stride == 0 || s.block_kernel == 0)
        {
            return bad("conv sizes, kernels and strides must be positive".into());
        }
        let last = self.tds.last().map(|s| s.channels).or(self.conv.last().map(|c| c.out_channels));
        if last != Some(self.feature_dim) {
            return bad(format!("last encoder layer has {last:?} channels, feature_dim is {}", self.feature_dim));
        }
        let rate = self.emg_rate_hz / self.total_stride() as f64;
        if (rate - self.feature_rate_hz).abs() > 1e-9 * self.feature_rate_hz.max(1.0) {
            return bad(format!("emg rate / total stride = {rate} Hz, feature rate is {}", self.feature_rate_hz));
        }
        let ratio = self.rollout_rate_hz / self.feature_rate_hz;
        if ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 {
            return bad("rollout rate must be an integer multiple of the feature rate".into());
        }
        if self.lstm_layers == 0 || self.lstm_hidden == 0 || self.head_hidden == 0 {
            return bad("decoder sizes must be positive".into());
        }
        if !(self.output_scalar > 0.0) || !self.output_scalar.is_finite() {
            return bad(format!("output scalar must be > 0, got {}", self.output_scalar));
        }
        Ok(())
    }

    /// Whether `spec` can run on parameters built from this config.
    pub fn check_spec(&self, spec: &RolloutSpec) -> Result<()> {
        if spec.output_param != self.output_param {
            return Err(Error::Config(format!(
                "rollout asks for {} decoding but the model was built for {}",
                spec.output_param.as_str(),
                self.output_param.as_str()
            )));
        }
        if spec.task == Task::Regression && !self.regression {
            return Err(Error::Config("regression rollout needs a model with the learned initial pose".into()));
        }
        if spec.hybrid() && !(spec.hybrid_warm_start_ms >= 0.0) {
            return Err(Error::Config("warm start must be >= 0 ms".into()));
        }
        Ok(())
    }

    pub fn has_position_head(&self) -> bool {
        self.regression && self.output_param == OutputParam::Velocity
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_with_nominal_rates() {
        for cfg in [ModelConfig::full(), ModelConfig::desk(), ModelConfig::tiny(), ModelConfig::grad_check()] {
            cfg.validate().unwrap();
            assert_eq!(cfg.total_stride(), 80);
        }
        let p = ModelConfig::full();
        assert_eq!(p.feature_frames(10_000).unwrap(), 125);
        assert_eq!(p.rollout_steps(10_000).unwrap(), 250);
        assert_eq!(ModelConfig::desk().feature_frames(800).unwrap(), 10);
        assert!(p.feature_frames(10_001).is_err());
        assert!(p.feature_frames(80).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ModelConfig::desk();
        c.output_scalar = 0.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.feature_rate_hz = 30.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.feature_dim = 7;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.rollout_rate_hz = 60.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn warm_start_covers_first_quarter_second() {
        let s = RolloutSpec::new(Task::Regression, OutputParam::Velocity);
        assert!(s.hybrid());
        assert_eq!(s.warm_start_steps(50.0), 13);
        assert_eq!(RolloutSpec::new(Task::Tracking, OutputParam::Velocity).warm_start_steps(50.0), 0);
        assert_eq!(RolloutSpec::new(Task::Regression, OutputParam::Position).warm_start_steps(50.0), 0);
        assert_eq!(RolloutSpec::new(Task::Tracking, OutputParam::Position).initial_pose_source(), InitialPoseSource::GroundTruth);
    }

    #[test]
    fn spec_must_match_model() {
        let cfg = ModelConfig::tiny();
        assert!(cfg.check_spec(&RolloutSpec::new(Task::Tracking, OutputParam::Position)).is_ok());
        assert!(cfg.check_spec(&RolloutSpec::new(Task::Tracking, OutputParam::Velocity)).is_err());
        assert!(cfg.check_spec(&RolloutSpec::new(Task::Regression, OutputParam::Position)).is_err());
    }
}
