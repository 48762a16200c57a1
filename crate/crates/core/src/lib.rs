//! Low-rank separable approximations of convolutional layers.
//!
//! The crate provides a small CNN runtime (valid convolutions, maxout,
//! softmax, dropout) together with two separable approximation schemes for
//! trained convolution layers, the optimizers that fit them, an exact
//! multiply-accumulate cost model, and a benchmark harness.

pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod lowrank;
pub mod network;
pub mod optim;
pub mod par;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use par::Execution;
pub use scalar::Scalar;
