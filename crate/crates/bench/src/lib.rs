//! File formats, the threaded sweep runner, reports and the command-line
//! front end for `responder-core`.

pub mod bundle;
pub mod checkpoint;
pub mod cli;
pub mod curves;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod report;
pub mod runner;
pub mod store;

pub use error::{BenchError, Result};
