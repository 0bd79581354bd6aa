//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Computations are recorded on a [`Tape`] as they run; [`Tape::backward`] replays the
//! recorded closures in reverse. Convolutions lower to im2col + GEMM.

pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use ops::shape::{concat, stack};
pub use gradcheck::{GradCheck, GradCheckReport};
pub use optim::{Adam, AdamConfig};
pub use params::ParamStore;
pub use tape::{BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;
