//! Networks of the synthesis pipeline.

mod config;
pub mod decoder;
pub mod encoder;
pub mod lgtn;
pub mod pipeline;
pub mod pose_transformer;

pub use config::ModelConfig;
