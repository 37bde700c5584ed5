//! Samples to token sequences, response masks and padded batches.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::grid::GridImage;
use crate::data::preference::PreferencePair;
use crate::data::tasks::{sample_rng, Sample};
use crate::data::vocab::{tokenize, EOS, PAD, SEP};
use crate::error::{Error, Result};
use crate::losses::{DpoPair, ScoredSequence};
use crate::model::PixelGrid;

/// `instruction <sep> response <eos>` with the rendered image.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub image: PixelGrid,
    pub tokens: Vec<u32>,
    /// Index in `tokens` of the first response token.
    pub response_start: usize,
}

impl EncodedSample {
    pub fn new(image: &GridImage, instruction: &str, response: &str) -> Result<Self> {
        let mut tokens = encode_prompt(instruction)?;
        if tokens.len() == 1 {
            return Err(Error::InvalidConfig("empty instruction".into()));
        }
        let response_start = tokens.len();
        tokens.extend(tokenize(response)?);
        tokens.push(EOS);
        Ok(Self {
            image: image.render(),
            tokens,
            response_start,
        })
    }

    pub fn from_sample(s: &Sample) -> Result<Self> {
        Self::new(&s.image, &s.instruction, &s.response)
    }

    /// Per-position labels and response mask over `n_image + tokens.len()`
    /// positions.
    pub fn scored(&self, n_image: usize) -> ScoredSequence {
        let total = n_image + self.tokens.len();
        let mut labels = vec![PAD; total];
        let mut mask = vec![false; total];
        for p in 0..total {
            let next = p + 1;
            if next >= n_image && next < total {
                let t = next - n_image;
                labels[p] = self.tokens[t];
                mask[p] = t >= self.response_start;
            }
        }
        ScoredSequence {
            image: self.image.clone(),
            text: self.tokens.clone(),
            labels,
            mask,
        }
    }
}

/// `instruction <sep>`: the decoding prompt.
pub fn encode_prompt(instruction: &str) -> Result<Vec<u32>> {
    let mut t = tokenize(instruction)?;
    t.push(SEP);
    Ok(t)
}

pub fn encode_pair(p: &PreferencePair, n_image: usize) -> Result<DpoPair> {
    Ok(DpoPair {
        chosen: EncodedSample::new(&p.image, &p.instruction, &p.chosen)?.scored(n_image),
        rejected: EncodedSample::new(&p.image, &p.instruction, &p.rejected)?.scored(n_image),
    })
}

/// Index batches for one epoch, shuffled by `(seed, epoch)`; every index
/// appears exactly once. The last batch may be short.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut sample_rng(seed, epoch.wrapping_add(1) << 32));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Rows padded with `<pad>` to a common length. Padding never enters a loss:
/// its mask is false and, attention being causal, it cannot influence the
/// positions before it.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub sequences: Vec<ScoredSequence>,
    pub lengths: Vec<usize>,
    pub width: usize,
}

impl PaddedBatch {
    pub fn new(rows: &[&EncodedSample], n_image: usize) -> Self {
        let width = rows.iter().map(|r| r.tokens.len()).max().unwrap_or(0);
        let mut sequences = Vec::with_capacity(rows.len());
        let mut lengths = Vec::with_capacity(rows.len());
        for r in rows {
            let mut s = r.scored(n_image);
            lengths.push(r.tokens.len());
            let pad = width - r.tokens.len();
            s.text.extend(core::iter::repeat(PAD).take(pad));
            s.labels.extend(core::iter::repeat(PAD).take(pad));
            s.mask.extend(core::iter::repeat(false).take(pad));
            sequences.push(s);
        }
        Self {
            sequences,
            lengths,
            width,
        }
    }

    /// Row `i` with its padding removed.
    pub fn trimmed(&self, i: usize, n_image: usize) -> ScoredSequence {
        let s = &self.sequences[i];
        let len = self.lengths[i];
        ScoredSequence {
            image: s.image.clone(),
            text: s.text[..len].to_vec(),
            labels: s.labels[..n_image + len].to_vec(),
            mask: s.mask[..n_image + len].to_vec(),
        }
    }
}
