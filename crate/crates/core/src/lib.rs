//! Core of a desk-scale mixture-of-experts distillation engine.
//!
//! Everything here is pure computation over `alloc`: the tiny multimodal
//! transformer with manual backpropagation, the top-k expert layer and
//! upcycling, the distillation and preference objectives, the synthetic
//! grid task generator and the staged trainer. File formats and the CLI live
//! in the `moekd` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod moe;
pub mod pipeline;
pub mod real;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Mllm, ModelConfig, ParamGroup};
pub use moe::MoeConfig;
pub use real::Real;
