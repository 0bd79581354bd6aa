//! Run configuration, checkpoints, the training schedule and evaluation.

mod checkpoint;
mod config;
pub mod eval;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use eval::{evaluate, synthesize_to_dir, write_evaluation, Evaluation};
pub use train::{initial_checkpoint, train, Trainer};
