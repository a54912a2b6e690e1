//! Loss, optimizer, schedule and the training loops.

mod config;
mod loss;
mod optim;
mod train;

pub use config::{lr_at, TaskMode, TrainConfig};
pub use loss::{pose_loss, pose_loss_node, pose_loss_with_grad, LossWeights};
pub use optim::{adamw_step, clip_grad_norm, global_norm, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use train::{detect_collapse, forward_tasks, train, train_with_progress, validate, EpochRecord, Predictions, TrainOutcome, TrainReport};

#[cfg(test)]
mod tests;
