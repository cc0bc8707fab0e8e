//! Difference-injection knowledge augmentation and editing for a frozen
//! decoder-only transformer.
//!
//! Small per-layer encoders read external knowledge together with the input
//! and add a correction to the residual stream of a frozen decoder. The
//! encoders are first regressed onto hidden-state differences captured from
//! two decoder forward passes (no back-propagation through the decoder), and
//! can then be fine-tuned or edited with gradients flowing through the frozen
//! decoder into the encoders only.
//!
//! The crate is `no_std` and only needs `alloc`; the `std` feature lets
//! the kernels use fused multiply-add where the target has it. File formats, the CLI and
//! wall-clock measurements live in the `diffinject` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod autograd;
pub mod bench;
pub mod counters;
pub mod data;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod injection;
pub mod kernels;
pub mod model;
pub mod optim;
mod real;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Graph, Var};
pub use counters::{OpCounters, Scope};
pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Tensor, TensorId};
