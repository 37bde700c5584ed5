//! Closed word-level vocabulary shared by teacher and student.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const SEP: u32 = 1;
pub const EOS: u32 = 2;

pub const COLORS: [&str; 5] = ["red", "green", "blue", "yellow", "purple"];
pub const SHAPES: [&str; 3] = ["circle", "square", "triangle"];
pub const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];

const SPECIAL: [&str; 3] = ["<pad>", "<sep>", "<eos>"];
const WORDS: [&str; 16] = [
    "describe", "the", "image", "how", "many", "where", "is", "row", "col", "are", "there",
    "more", "or", "and", "same", "none",
];

/// Every symbol, in id order.
pub fn symbols() -> impl Iterator<Item = &'static str> {
    SPECIAL
        .iter()
        .chain(COLORS.iter())
        .chain(SHAPES.iter())
        .chain(DIGITS.iter())
        .chain(WORDS.iter())
        .copied()
}

pub fn vocab_size() -> usize {
    symbols().count()
}

pub fn token_id(word: &str) -> Option<u32> {
    symbols().position(|s| s == word).map(|i| i as u32)
}

pub fn symbol(id: u32) -> Option<&'static str> {
    symbols().nth(id as usize)
}

pub fn color_id(i: usize) -> u32 {
    (SPECIAL.len() + i) as u32
}

pub fn digit_id(d: usize) -> u32 {
    (SPECIAL.len() + COLORS.len() + SHAPES.len() + d) as u32
}

/// Whitespace-separated words to ids.
pub fn tokenize(text: &str) -> Result<Vec<u32>> {
    text.split_whitespace()
        .map(|w| token_id(w).ok_or_else(|| Error::UnknownSymbol(w.to_string())))
        .collect()
}

/// Ids to single-space-separated words. Inverse of [`tokenize`] on
/// canonically spaced text.
pub fn detokenize(ids: &[u32]) -> Result<String> {
    let mut out = String::new();
    for (i, &id) in ids.iter().enumerate() {
        let w = symbol(id).ok_or_else(|| Error::UnknownSymbol(alloc::format!("#{id}")))?;
        if i > 0 {
            out.push(' ');
        }
        out.push_str(w);
    }
    Ok(out)
}
