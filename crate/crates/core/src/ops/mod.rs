//! Differentiable primitives. Each submodule adds methods to
//! [`Tape`](crate::Tape) together with the backward kernels the tape
//! dispatches to.

pub mod activation;
pub mod attention;
pub mod conv;
pub mod linalg;
pub mod loss;
pub mod norm;
pub mod pool;

pub use activation::Activation;
pub use conv::{ConvGeometry, Padding};
