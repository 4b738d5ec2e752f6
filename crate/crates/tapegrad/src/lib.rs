//! Minimal dense-tensor math with tape-based reverse-mode differentiation.
//!
//! Everything is 64-bit floats stored row-major. A [`Tape`] records primitive
//! operations as they execute; [`Tape::backward`] replays the record to fill
//! in gradients for the leaves marked `requires_grad`. The op set is exactly
//! what a small graph/sequence model needs: matmul, elementwise activations
//! (sigmoid, relu, tanh, swish), axis reductions with argmax, concatenation
//! and gather/slice/select for graph bookkeeping, and feature-wise batch
//! normalization.
//!
//! Broadcasting is deliberately limited to bias-row addition
//! ([`Tape::add_bias`]); everything else requires exact shapes so that naive
//! oracles stay line-for-line comparable.
//!
//! [`gradcheck`] provides the central finite-difference harness used by the
//! test suites downstream.

mod error;
pub mod gradcheck;
mod tape;
mod tensor;

pub use error::{Error, Result};
pub use tape::{Tape, TensorId};
pub use tensor::Tensor;
