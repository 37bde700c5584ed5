//! Synthetic grid-world instruction data, preference pairs, tokenization
//! and batching.

pub mod encode;
pub mod grid;
pub mod preference;
pub mod tasks;
pub mod verify;
pub mod vocab;

pub use encode::{encode_pair, encode_prompt, epoch_batches, EncodedSample, PaddedBatch};
pub use grid::{Cell, Color, GridConfig, GridImage, Shape, PATCH_DIM};
pub use preference::{gen_preference_pairs, Corruption, CorruptionMix, PreferencePair};
pub use tasks::{gen_samples, Sample, TaskMix, TaskTag};
pub use verify::{parse_question, verify, Question, Verdict};
pub use vocab::{detokenize, tokenize, vocab_size};

use crate::model::ModelConfig;

/// Student config sized for the default grid and vocabulary.
pub fn student_config() -> ModelConfig {
    ModelConfig::student(vocab_size(), PATCH_DIM, GridConfig::default().n_cells())
}

/// Teacher config sized for the default grid and vocabulary.
pub fn teacher_config() -> ModelConfig {
    ModelConfig::teacher(vocab_size(), PATCH_DIM, GridConfig::default().n_cells())
}
