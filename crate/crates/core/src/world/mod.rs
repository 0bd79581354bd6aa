//! Synthetic multi-view stick-figure world.

pub mod dataset;
pub mod render;
pub mod skeleton;

pub use dataset::{generate_dataset, DataConfig, Dataset, Manifest, Sample, Split};
pub use render::render;
pub use skeleton::{make_motion, project, MotionClip, Skeleton3D, Viewpoint, NUM_JOINTS};
