//! Virtual molecule screening: Bayesian matrix-factorization inference,
//! fixed-point quantization, blocked and dataflow kernels, and an analytical
//! accelerator model.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod error;
pub mod exec;
pub mod fixedpoint;
pub mod io;
pub mod kernel;
pub mod model;
pub mod perfmodel;
pub mod quantize;

pub use error::{Result, VmsError};
pub use exec::Execution;
