//! The multimodal transformer: frozen vision stub, trainable adaptor and a
//! causal language backbone whose feed-forward sublayers may be sparse.

pub mod adaptor;
pub mod config;
pub mod layers;
pub mod lm;
pub mod mllm;
pub mod params;
pub mod vision;

pub use adaptor::Adaptor;
pub use config::ModelConfig;
pub use lm::{Block, FeedForwardKind, TransformerLM};
pub use mllm::{Mllm, MllmTrace};
pub use params::{ParamGroup, ParamGroups, ParamMut, ParamRef, Params};
pub use vision::{PixelGrid, VisionStub};
