//! Preference pairs: the ground-truth answer against a labelled corruption.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::grid::{Color, GridConfig, GridImage};
use crate::data::tasks::{allocate_tags, make_sample, sample_rng, TaskTag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Count answer off by one in a random direction.
    WrongCount,
    /// Caption names a color that is not in the grid.
    AbsentObject,
    /// Location answer with a wrong row or column.
    WrongLocation,
    /// Comparison answer naming the wrong side.
    WrongComparison,
}

impl Corruption {
    pub const ALL: [Corruption; 4] = [
        Self::WrongCount,
        Self::AbsentObject,
        Self::WrongLocation,
        Self::WrongComparison,
    ];

    pub fn task(self) -> TaskTag {
        match self {
            Self::WrongCount => TaskTag::Count,
            Self::AbsentObject => TaskTag::Caption,
            Self::WrongLocation => TaskTag::Locate,
            Self::WrongComparison => TaskTag::Compare,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionMix {
    #[serde(default)]
    pub wrong_count: f64,
    #[serde(default)]
    pub absent_object: f64,
    #[serde(default)]
    pub wrong_location: f64,
    #[serde(default)]
    pub wrong_comparison: f64,
}

impl Default for CorruptionMix {
    fn default() -> Self {
        Self {
            wrong_count: 0.25,
            absent_object: 0.25,
            wrong_location: 0.25,
            wrong_comparison: 0.25,
        }
    }
}

impl CorruptionMix {
    pub fn weight(&self, c: Corruption) -> f64 {
        match c {
            Corruption::WrongCount => self.wrong_count,
            Corruption::AbsentObject => self.absent_object,
            Corruption::WrongLocation => self.wrong_location,
            Corruption::WrongComparison => self.wrong_comparison,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = Corruption::ALL.map(|c| self.weight(c));
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidMix(format!("negative or non-finite weight in {self:?}")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMix(format!("weights sum to {total}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub image: GridImage,
    pub instruction: String,
    pub chosen: String,
    pub rejected: String,
    pub corruption: Corruption,
}

fn corrupt<R: Rng>(kind: Corruption, image: &GridImage, truth: &str, instruction: &str, rng: &mut R) -> String {
    match kind {
        Corruption::WrongCount => {
            let n: usize = truth.parse().expect("count answers are digits");
            // either direction, so the pairs carry no bias toward small counts
            let up = n == 0 || (n < 9 && rng.gen_bool(0.5));
            if up { n + 1 } else { n - 1 }.to_string()
        }
        Corruption::AbsentObject => {
            let absent: Vec<Color> = Color::ALL.iter().copied().filter(|&c| !image.has_color(c)).collect();
            let mut words: Vec<&str> = truth.split(' ').collect();
            let slots: Vec<usize> = (0..words.len()).filter(|&i| Color::from_word(words[i]).is_some()).collect();
            let slot = *slots.choose(rng).expect("captions mention at least one color");
            words[slot] = absent.choose(rng).expect("grid leaves a color absent").word();
            words.join(" ")
        }
        Corruption::WrongLocation => {
            // "row R col C"
            let mut parts: Vec<String> = truth.split(' ').map(ToString::to_string).collect();
            let (slot, limit) = if rng.gen_bool(0.5) { (1, image.rows()) } else { (3, image.cols()) };
            let current: usize = parts[slot].parse().unwrap();
            let choices: Vec<usize> = (1..=limit).filter(|&v| v != current).collect();
            parts[slot] = choices.choose(rng).unwrap().to_string();
            parts.join(" ")
        }
        Corruption::WrongComparison => {
            let w: Vec<&str> = instruction.split(' ').collect();
            let (a, b) = (w[3], w[5]);
            match truth {
                t if t == a => b.to_string(),
                t if t == b => a.to_string(),
                _ => a.to_string(),
            }
        }
    }
}

/// `n` pairs whose corruption kinds follow `mix`.
pub fn gen_preference_pairs(seed: u64, n: usize, mix: &CorruptionMix, grid: &GridConfig) -> Result<Vec<PreferencePair>> {
    mix.validate()?;
    grid.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("pair count must be at least 1".into()));
    }
    let weights: Vec<(Corruption, f64)> = Corruption::ALL.iter().map(|&c| (c, mix.weight(c))).collect();
    let kinds = allocate_tags(n, &weights, seed ^ 0x5eed_0f_9a1b);
    Ok(kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let mut rng = sample_rng(seed ^ 0x5eed_0f_9a1b, i as u64);
            let s = make_sample(kind.task(), grid, &mut rng);
            let rejected = corrupt(kind, &s.image, &s.response, &s.instruction, &mut rng);
            PreferencePair {
                image: s.image,
                instruction: s.instruction,
                chosen: s.response,
                rejected,
                corruption: kind,
            }
        })
        .collect())
}
