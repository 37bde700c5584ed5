use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and seed of one multimodal model (teacher or student).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub n_image_tokens: usize,
    pub d_vision: usize,
    /// Width of one flattened image patch fed to the vision stub.
    pub patch_dim: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("{msg}: {self:?}")));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("zero-sized dimension");
        }
        if self.d_vision == 0 || self.patch_dim == 0 || self.n_image_tokens == 0 {
            return bad("zero-sized vision dimension");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.n_image_tokens >= self.max_seq {
            return bad("image tokens leave no room for text");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Default desk-scale student.
    pub fn student(vocab_size: usize, patch_dim: usize, n_image_tokens: usize) -> Self {
        Self {
            vocab_size,
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            d_ff: 64,
            max_seq: n_image_tokens + 24,
            n_image_tokens,
            d_vision: 16,
            patch_dim,
            seed: 0,
        }
    }

    /// Default teacher: twice the student's width and depth.
    pub fn teacher(vocab_size: usize, patch_dim: usize, n_image_tokens: usize) -> Self {
        let s = Self::student(vocab_size, patch_dim, n_image_tokens);
        Self {
            d_model: 2 * s.d_model,
            n_layers: 2 * s.n_layers,
            n_heads: 2 * s.n_heads,
            d_ff: 2 * s.d_ff,
            seed: 1,
            ..s
        }
    }
}
