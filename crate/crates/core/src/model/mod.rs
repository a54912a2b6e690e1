//! Causal conv/TDS encoder with an autoregressive LSTM decoder.

mod config;
mod forward;
mod params;

pub use config::{ConvSpec, InitialPoseSource, ModelConfig, OutputParam, RolloutSpec, Task, TdsStageSpec, DEFAULT_WARM_START_MS};
pub use forward::{encode, predict, rollout};
pub use params::{Bound, ModelParams, Param};
