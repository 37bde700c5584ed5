//! File formats and drivers around `moekd-core`: checkpoints, JSON-Lines
//! datasets, plan files, metrics output and the `moekd` command line.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod jsonl;
pub mod metrics;
pub mod plan;

pub use error::{Error, Result};
