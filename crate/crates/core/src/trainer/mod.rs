//! Variational training and test-time rollout.

mod checkpoint;
mod objective;
mod optim;
mod params;
mod rollout;
mod train;

pub use checkpoint::{checkpoint_bytes, params_from_checkpoint, read_checkpoint, write_checkpoint};
pub use objective::{forward_step, trajectory_loss, trajectory_terms, Objective, StepTerms};
pub use optim::Adam;
pub use params::{ParamLayout, ParamSet, Segment};
pub use rollout::{attention_csv, rollout, ActionSelection, Rollout, RolloutOptions, RolloutStep};
pub use train::{
    action_accuracy, batch_loss, diagnostics_csv, evaluate, gradient, train, GradMode, StepDiagnostics,
    TrainConfig, TrainOutcome,
};
