//! Batched objectives and the optimizer loop shared by every stage.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::epoch_batches;
use crate::error::{Error, Result};
use crate::eval::{MetricsReport, StepRecord};
use crate::losses::{
    check_labels, check_mask, check_pair, dpo_loss_grad, kl_sum, logprob_sum, D2sWeights, DpoBatch, DpoPair,
    ScoredSequence, TokenLogits,
};
use crate::model::Mllm;
use crate::pipeline::optim::{AdamConfig, AdamW, Selector};
use crate::pipeline::schedule::update_lr;

/// What a stage minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Next-token cross-entropy on the response.
    Ce,
    /// `KL(π_T ‖ π_S)` on the response.
    Kl,
    /// Weighted sum of the two.
    D2s(D2sWeights),
    /// Preference loss against the teacher as reference.
    Dpo { beta: f64 },
}

impl Objective {
    pub fn needs_teacher(&self) -> bool {
        !matches!(self, Self::Ce)
    }
}

/// Training examples: scored sequences for the token objectives, pairs for
/// the preference objective.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainData {
    Sequences(Vec<ScoredSequence>),
    Pairs(Vec<DpoPair>),
}

impl TrainData {
    pub fn len(&self) -> usize {
        match self {
            Self::Sequences(s) => s.len(),
            Self::Pairs(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss of one batch under `objective`; student gradients are accumulated
/// into `grad`. Token objectives average over every response position of the
/// batch, the preference objective over pairs.
pub fn batch_loss_grad(
    student: &Mllm<f32>,
    teacher: Option<&Mllm<f32>>,
    objective: &Objective,
    data: &TrainData,
    batch: &[usize],
    grad: &mut Mllm<f32>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if objective.needs_teacher() && teacher.is_none() {
        return Err(Error::TeacherUnavailable);
    }
    let vocab = student.vocab_size();
    match (objective, data) {
        (Objective::Dpo { beta }, TrainData::Pairs(pairs)) => {
            let batch = DpoBatch {
                pairs: batch.iter().map(|&i| pairs[i].clone()).collect(),
                beta: *beta,
            };
            dpo_loss_grad(student, teacher.ok_or(Error::TeacherUnavailable)?, &batch, 1.0, grad)
        }
        (Objective::Dpo { .. }, TrainData::Sequences(_)) => {
            Err(Error::InvalidConfig("the preference objective needs preference pairs".into()))
        }
        (_, TrainData::Pairs(_)) => Err(Error::InvalidConfig("token objectives need sequences".into())),
        (obj, TrainData::Sequences(seqs)) => {
            let mut n = 0usize;
            for &i in batch {
                n += check_mask(seqs[i].positions(), &seqs[i].mask)?;
            }
            let inv = 1.0 / n as f64;
            let (w_ce, w_kl) = match obj {
                Objective::Ce => (1.0, 0.0),
                Objective::Kl => (0.0, 1.0),
                Objective::D2s(w) => (w.ce, w.kl),
                Objective::Dpo { .. } => unreachable!(),
            };
            let mut total = 0.0;
            for &i in batch {
                let seq = &seqs[i];
                let (logits, trace) = student.forward_traced(&seq.image, &seq.text)?;
                let view = TokenLogits::new(&logits, vocab)?;
                let mut g = vec![0.0f32; logits.len()];
                if w_ce != 0.0 {
                    check_labels(&view, &seq.labels, &seq.mask)?;
                    let lp = logprob_sum(&view, &seq.labels, &seq.mask, Some((&mut g, -w_ce * inv)));
                    total -= w_ce * lp * inv;
                }
                if w_kl != 0.0 {
                    let t = teacher.ok_or(Error::TeacherUnavailable)?;
                    let tl = t.forward_logits(&seq.image, &seq.text)?;
                    let tview = TokenLogits::new(&tl, vocab)?;
                    check_pair(&view, &tview)?;
                    total += w_kl * kl_sum(&view, &tview, &seq.mask, Some((&mut g, w_kl * inv))) * inv;
                }
                student.backward(&trace, &g, grad);
            }
            Ok(total)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_ratio: f64,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    pub adam: AdamConfig,
}

/// Number of optimizer updates `settings` implies for `n` examples.
pub fn total_updates(n: usize, settings: &TrainSettings) -> usize {
    settings.epochs * n.div_ceil(settings.batch_size.max(1))
}

/// Runs the epochs of one training phase, logging a step record per update
/// under `label`. `on_update` is called after every update with the global
/// update count; returning `true` stops training early.
#[allow(clippy::too_many_arguments)]
pub fn train(
    student: &mut Mllm<f32>,
    teacher: Option<&Mllm<f32>>,
    objective: &Objective,
    data: &TrainData,
    select: Selector<'_>,
    settings: &TrainSettings,
    label: &str,
    report: &mut MetricsReport,
    on_update: &mut dyn FnMut(usize, &Mllm<f32>) -> Result<bool>,
) -> Result<usize> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if settings.epochs == 0 {
        return Err(Error::InvalidConfig("epochs must be at least 1".into()));
    }
    let total = total_updates(data.len(), settings);
    let mut opt = AdamW::new(settings.adam, student, select);
    let mut grad = student.zeros_like();
    let mut done = 0usize;
    for epoch in 0..settings.epochs {
        for batch in epoch_batches(data.len(), settings.batch_size, settings.seed, epoch as u64)? {
            grad.zero_grad();
            let loss = batch_loss_grad(student, teacher, objective, data, &batch, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::NumericError("non-finite training loss"));
            }
            let norm = opt.grad_norm(&grad);
            if !norm.is_finite() {
                return Err(Error::NumericError("non-finite gradient"));
            }
            let scale = match settings.grad_clip {
                Some(c) if norm > c => c / norm,
                _ => 1.0,
            };
            let lr = update_lr(done, total, settings.lr, settings.warmup_ratio)?;
            opt.step(student, &grad, lr, scale);
            report.steps.push(StepRecord {
                stage: String::from(label),
                step: done,
                loss,
                lr,
            });
            done += 1;
            if on_update(done, student)? {
                return Ok(done);
            }
        }
    }
    Ok(done)
}
