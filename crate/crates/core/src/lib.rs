//! Pose-guided novel-view action video synthesis.

pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod pose;
pub mod video;
pub mod world;

pub use error::{Error, Result};
