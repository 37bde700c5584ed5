//! Training objectives over response positions.
//!
//! All reductions run in `f64` with max-subtracted log-softmax. Positions
//! where the mask is false are never read, so changing their logits cannot
//! change any loss value.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;


use crate::error::{Error, Result};
use crate::model::{Mllm, PixelGrid};
use crate::real::Real;

/// Row-major `[positions, vocab]` logits.
#[derive(Debug, Clone, Copy)]
pub struct TokenLogits<'a, T> {
    pub data: &'a [T],
    pub vocab: usize,
}

impl<'a, T: Real> TokenLogits<'a, T> {
    pub fn new(data: &'a [T], vocab: usize) -> Result<Self> {
        if vocab == 0 || data.len() % vocab != 0 {
            return Err(Error::ShapeError(format!(
                "{} logits is not a multiple of vocab {vocab}",
                data.len()
            )));
        }
        Ok(Self { data, vocab })
    }

    pub fn positions(&self) -> usize {
        self.data.len() / self.vocab
    }

    pub fn row(&self, p: usize) -> &'a [T] {
        &self.data[p * self.vocab..(p + 1) * self.vocab]
    }
}

/// Relative weights of the two terms of the dense-to-sparse objective.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct D2sWeights {
    pub ce: f64,
    pub kl: f64,
}

impl Default for D2sWeights {
    fn default() -> Self {
        Self { ce: 1.0, kl: 1.0 }
    }
}

pub fn log_softmax<T: Real>(row: &[T]) -> Vec<f64> {
    let max = row
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(row.iter().map(|v| libm::exp(v.as_f64() - max)).sum::<f64>());
    row.iter().map(|v| v.as_f64() - lse).collect()
}

pub(crate) fn check_mask(positions: usize, mask: &[bool]) -> Result<usize> {
    if mask.len() != positions {
        return Err(Error::ShapeError(format!(
            "mask length {} != positions {positions}",
            mask.len()
        )));
    }
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::EmptyResponse),
        n => Ok(n),
    }
}

pub(crate) fn check_labels(logits: &TokenLogits<'_, impl Real>, labels: &[u32], mask: &[bool]) -> Result<()> {
    if labels.len() != logits.positions() {
        return Err(Error::ShapeError(format!(
            "labels length {} != positions {}",
            labels.len(),
            logits.positions()
        )));
    }
    for (&l, &m) in labels.iter().zip(mask) {
        if m && l as usize >= logits.vocab {
            return Err(Error::InvalidLabel {
                label: l,
                vocab: logits.vocab,
            });
        }
    }
    Ok(())
}

pub(crate) fn check_pair<T: Real>(student: &TokenLogits<'_, T>, teacher: &TokenLogits<'_, T>) -> Result<()> {
    if student.vocab != teacher.vocab || student.data.len() != teacher.data.len() {
        return Err(Error::ShapeError(format!(
            "student [{}x{}] vs teacher [{}x{}]",
            student.positions(),
            student.vocab,
            teacher.positions(),
            teacher.vocab
        )));
    }
    Ok(())
}

/// Sum over masked positions of `coef · log π(label)`; when `grad` is given,
/// adds `coef · ∂/∂logits` into it. Returns the unscaled sum.
pub(crate) fn logprob_sum<T: Real>(
    logits: &TokenLogits<'_, T>,
    labels: &[u32],
    mask: &[bool],
    grad: Option<(&mut [T], f64)>,
) -> f64 {
    let mut total = 0.0;
    let mut grad = grad;
    for p in (0..logits.positions()).filter(|&p| mask[p]) {
        let ls = log_softmax(logits.row(p));
        let y = labels[p] as usize;
        total += ls[y];
        if let Some((g, coef)) = grad.as_mut() {
            let row = &mut g[p * logits.vocab..(p + 1) * logits.vocab];
            for (v, (gv, &l)) in row.iter_mut().zip(&ls).enumerate() {
                let onehot = if v == y { 1.0 } else { 0.0 };
                *gv += T::of(*coef * (onehot - libm::exp(l)));
            }
        }
    }
    total
}

/// Sum over masked positions of `KL(π_T ‖ π_S)`; the gradient of one
/// position w.r.t. the student logits is `π_S − π_T`.
pub(crate) fn kl_sum<T: Real>(
    student: &TokenLogits<'_, T>,
    teacher: &TokenLogits<'_, T>,
    mask: &[bool],
    grad: Option<(&mut [T], f64)>,
) -> f64 {
    let mut total = 0.0;
    let mut grad = grad;
    for p in (0..student.positions()).filter(|&p| mask[p]) {
        let ls = log_softmax(student.row(p));
        let lt = log_softmax(teacher.row(p));
        let mut kl = 0.0;
        for (&s, &t) in ls.iter().zip(&lt) {
            let pt = libm::exp(t);
            if pt > 0.0 {
                kl += pt * (t - s);
            }
        }
        total += kl.max(0.0);
        if let Some((g, scale)) = grad.as_mut() {
            let row = &mut g[p * student.vocab..(p + 1) * student.vocab];
            for (gv, (&s, &t)) in row.iter_mut().zip(ls.iter().zip(&lt)) {
                *gv += T::of(*scale * (libm::exp(s) - libm::exp(t)));
            }
        }
    }
    total
}

/// Mean next-token cross-entropy over the masked positions.
pub fn init_ce_loss<T: Real>(logits: TokenLogits<'_, T>, labels: &[u32], mask: &[bool]) -> Result<f64> {
    let n = check_mask(logits.positions(), mask)?;
    check_labels(&logits, labels, mask)?;
    Ok(-logprob_sum(&logits, labels, mask, None) / n as f64)
}

pub fn init_ce_loss_grad<T: Real>(
    logits: TokenLogits<'_, T>,
    labels: &[u32],
    mask: &[bool],
) -> Result<(f64, Vec<T>)> {
    let n = check_mask(logits.positions(), mask)?;
    check_labels(&logits, labels, mask)?;
    let mut g = vec![T::zero(); logits.data.len()];
    let s = logprob_sum(&logits, labels, mask, Some((&mut g, -1.0 / n as f64)));
    Ok((-s / n as f64, g))
}

/// Mean `KL(π_T ‖ π_S)` over the full vocabulary at each masked position.
pub fn kd_kl_loss<T: Real>(
    student: TokenLogits<'_, T>,
    teacher: TokenLogits<'_, T>,
    mask: &[bool],
) -> Result<f64> {
    check_pair(&student, &teacher)?;
    let n = check_mask(student.positions(), mask)?;
    Ok(kl_sum(&student, &teacher, mask, None) / n as f64)
}

pub fn kd_kl_loss_grad<T: Real>(
    student: TokenLogits<'_, T>,
    teacher: TokenLogits<'_, T>,
    mask: &[bool],
) -> Result<(f64, Vec<T>)> {
    check_pair(&student, &teacher)?;
    let n = check_mask(student.positions(), mask)?;
    let mut g = vec![T::zero(); student.data.len()];
    let s = kl_sum(&student, &teacher, mask, Some((&mut g, 1.0 / n as f64)));
    Ok((s / n as f64, g))
}

/// `w_ce · CE + w_kl · KL` on the same masked positions.
pub fn d2s_loss<T: Real>(
    student: TokenLogits<'_, T>,
    teacher: TokenLogits<'_, T>,
    labels: &[u32],
    mask: &[bool],
    weights: D2sWeights,
) -> Result<f64> {
    let ce = init_ce_loss(student, labels, mask)?;
    let kl = kd_kl_loss(student, teacher, mask)?;
    Ok(weights.ce * ce + weights.kl * kl)
}

pub fn d2s_loss_grad<T: Real>(
    student: TokenLogits<'_, T>,
    teacher: TokenLogits<'_, T>,
    labels: &[u32],
    mask: &[bool],
    weights: D2sWeights,
) -> Result<(f64, Vec<T>)> {
    check_pair(&student, &teacher)?;
    let n = check_mask(student.positions(), mask)? as f64;
    check_labels(&student, labels, mask)?;
    let mut g = vec![T::zero(); student.data.len()];
    let lp = logprob_sum(&student, labels, mask, Some((&mut g, -weights.ce / n)));
    let kl = kl_sum(&student, &teacher, mask, Some((&mut g, weights.kl / n)));
    Ok((weights.ce * (-lp / n) + weights.kl * (kl / n), g))
}

/// A tokenized sequence scored against its own next tokens.
///
/// `labels[p]` is the token at position `p + 1` of the full sequence (image
/// tokens first), `mask[p]` is true when that token belongs to the response.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    pub image: PixelGrid,
    pub text: Vec<u32>,
    pub labels: Vec<u32>,
    pub mask: Vec<bool>,
}

impl ScoredSequence {
    pub fn positions(&self) -> usize {
        self.labels.len()
    }
}

/// `Σ log π(y_k | y_<k, x)` over the masked positions (a sum, not a mean).
pub fn sequence_logprob<T: Real>(model: &Mllm<T>, seq: &ScoredSequence) -> Result<f64> {
    check_mask(seq.positions(), &seq.mask)?;
    let logits = model.forward_logits(&seq.image, &seq.text)?;
    masked_logprob(TokenLogits::new(&logits, model.vocab_size())?, &seq.labels, &seq.mask)
}

/// [`sequence_logprob`] on precomputed logits.
pub fn masked_logprob<T: Real>(logits: TokenLogits<'_, T>, labels: &[u32], mask: &[bool]) -> Result<f64> {
    check_mask(logits.positions(), mask)?;
    check_labels(&logits, labels, mask)?;
    Ok(logprob_sum(&logits, labels, mask, None))
}

/// One preference record: the same prompt with a chosen and a rejected
/// response.
#[derive(Debug, Clone, PartialEq)]
pub struct DpoPair {
    pub chosen: ScoredSequence,
    pub rejected: ScoredSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpoBatch {
    pub pairs: Vec<DpoPair>,
    pub beta: f64,
}

impl DpoBatch {
    fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidBeta(self.beta));
        }
        if self.pairs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(())
    }
}

/// `−log σ(m)` computed as a softplus.
pub fn dpo_loss_from_margin(margin: f64) -> f64 {
    let x = -margin;
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

fn sigmoid64(x: f64) -> f64 {
    crate::real::sigmoid(x)
}

/// `β·(Δ⁺ − Δ⁻)` for one pair, `Δ = log π_S(y|x) − log π_T(y|x)`.
pub fn pair_margin<T: Real>(student: &Mllm<T>, teacher: &Mllm<T>, pair: &DpoPair, beta: f64) -> Result<f64> {
    let dc = sequence_logprob(student, &pair.chosen)? - sequence_logprob(teacher, &pair.chosen)?;
    let dr = sequence_logprob(student, &pair.rejected)? - sequence_logprob(teacher, &pair.rejected)?;
    Ok(beta * (dc - dr))
}

/// Mean implicit reward margin over the batch.
pub fn implicit_reward_margin<T: Real>(student: &Mllm<T>, teacher: &Mllm<T>, batch: &DpoBatch) -> Result<f64> {
    batch.validate()?;
    let mut total = 0.0;
    for pair in &batch.pairs {
        total += pair_margin(student, teacher, pair, batch.beta)?;
    }
    Ok(total / batch.pairs.len() as f64)
}

/// Preference loss with the teacher as the frozen reference, averaged over
/// the batch.
pub fn dpo_loss<T: Real>(student: &Mllm<T>, teacher: &Mllm<T>, batch: &DpoBatch) -> Result<f64> {
    batch.validate()?;
    let mut total = 0.0;
    for pair in &batch.pairs {
        total += dpo_loss_from_margin(pair_margin(student, teacher, pair, batch.beta)?);
    }
    Ok(total / batch.pairs.len() as f64)
}

/// Same value as [`dpo_loss`]; accumulates student gradients into `grad`
/// scaled by `scale`. The teacher is only ever read.
pub fn dpo_loss_grad<T: Real>(
    student: &Mllm<T>,
    teacher: &Mllm<T>,
    batch: &DpoBatch,
    scale: f64,
    grad: &mut Mllm<T>,
) -> Result<f64> {
    batch.validate()?;
    let n = batch.pairs.len() as f64;
    let vocab = student.vocab_size();
    let mut total = 0.0;
    for pair in &batch.pairs {
        let ref_c = sequence_logprob(teacher, &pair.chosen)?;
        let ref_r = sequence_logprob(teacher, &pair.rejected)?;
        let (lc, tc) = student.forward_traced(&pair.chosen.image, &pair.chosen.text)?;
        let (lr, tr) = student.forward_traced(&pair.rejected.image, &pair.rejected.text)?;
        let lc_view = TokenLogits::new(&lc, vocab)?;
        let lr_view = TokenLogits::new(&lr, vocab)?;
        for (view, seq) in [(&lc_view, &pair.chosen), (&lr_view, &pair.rejected)] {
            check_mask(seq.positions(), &seq.mask)?;
            check_labels(view, &seq.labels, &seq.mask)?;
        }
        let pc = logprob_sum(&lc_view, &pair.chosen.labels, &pair.chosen.mask, None);
        let pr = logprob_sum(&lr_view, &pair.rejected.labels, &pair.rejected.mask, None);
        let margin = batch.beta * ((pc - ref_c) - (pr - ref_r));
        total += dpo_loss_from_margin(margin);
        // d(−log σ(m))/dm = −σ(−m)
        let dm = -sigmoid64(-margin) * scale / n;
        let mut gc = vec![T::zero(); lc.len()];
        logprob_sum(&lc_view, &pair.chosen.labels, &pair.chosen.mask, Some((&mut gc, dm * batch.beta)));
        let mut gr = vec![T::zero(); lr.len()];
        logprob_sum(&lr_view, &pair.rejected.labels, &pair.rejected.mask, Some((&mut gr, -dm * batch.beta)));
        student.backward(&tc, &gc, grad);
        student.backward(&tr, &gr, grad);
    }
    Ok(total / n)
}
