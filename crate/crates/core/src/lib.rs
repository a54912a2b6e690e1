//! Streaming EMG-to-hand-pose decoding: a small reverse-mode autodiff
//! engine, the causal encoder and autoregressive decoder built on it,
//! synthetic data, training, filtering and evaluation.

pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod filtering;
pub mod kinematics;
pub mod model;
pub mod training;

pub use error::{Error, Result};
