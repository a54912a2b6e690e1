//! Metrics, baselines, aggregation rules and time/frequency error analyses.

mod aggregate;
mod baseline;
pub mod drift;
mod metrics;
mod spectrum;
mod timestep;

pub use aggregate::{aggregate, AggregateRow, MetricsRecord};
pub use baseline::{static_regression, static_tracking, training_medians};
pub use metrics::{angular_error, landmark_error, mean_speed};
pub use spectrum::{residual_spectrum, spectrum_diff, ResidualSpectrum};
pub use timestep::{per_timestep_error, TimestepCurve};
