//! Numerical core of the responder workbench: dose-response fitting, expression
//! preprocessing, dataset assembly, a small dense network kernel with exact
//! backpropagation, the training protocol, cross-validation metrics, sweep
//! bookkeeping and the statistics used to analyse sweep results.
//!
//! The crate is `no_std` and only needs an allocator. File formats, the worker
//! pool and the command-line front end live in `responder-bench`.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod dataset;
pub mod dose_response;
pub mod error;
pub mod evaluation;
pub mod expression;
pub mod nn;
pub mod numeric;
pub mod sweep;
pub mod trainer;

pub use error::{Error, Result};
