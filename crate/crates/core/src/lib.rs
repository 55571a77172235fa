//! Set-input convolutional networks built on a small reverse-mode autodiff
//! engine.
//!
//! The crate is `no_std` (it needs `alloc`). Everything is a pure function of
//! its inputs and explicit seeds: tensors, the tape, the set layers
//! (SetConv2D, multi-head self-attention, Deep Sets, set attention blocks,
//! score and late fusion), the model zoo, combinatorial training, the
//! synthetic corpora and Grad-CAM. File formats and the command line live in
//! the `setconv` companion crate.
//!
//! Data layout is channels-last throughout: a set of volumes is a
//! `[N, H, W, C]` tensor and a set of latent vectors is `[N, C]`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
mod error;
pub mod explain;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
mod real;
pub mod tape;
mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
