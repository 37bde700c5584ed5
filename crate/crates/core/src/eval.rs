//! Evaluation metrics and the per-stage metrics report.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{
    detokenize, encode_pair, encode_prompt, gen_preference_pairs, gen_samples, verify, CorruptionMix,
    EncodedSample, GridConfig, GridImage, PreferencePair, Sample, TaskMix,
};
use crate::data::vocab::EOS;
use crate::error::{Error, Result};
use crate::losses::{kd_kl_loss, pair_margin, TokenLogits};
use crate::model::{Mllm, PixelGrid};
use crate::moe::{UtilizationCounter, UtilizationStats};
use crate::real::Real;

/// Longest response the decoder will produce before giving up.
pub const MAX_RESPONSE_TOKENS: usize = 14;

fn argmax_lowest<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding (ties to the lowest id) until `<eos>`, the length cap or
/// the model's context limit. The returned ids exclude `<eos>`.
pub fn greedy_decode<T: Real>(model: &Mllm<T>, image: &PixelGrid, prompt: &[u32], max_new: usize) -> Result<Vec<u32>> {
    let image_tokens = model.image_tokens(image)?;
    let n_image = model.config.n_image_tokens;
    let vocab = model.vocab_size();
    let mut text = prompt.to_vec();
    let mut out = Vec::new();
    for _ in 0..max_new {
        if n_image + text.len() >= model.config.max_seq {
            break;
        }
        let logits = model.lm.forward_logits(&image_tokens, &text)?;
        let last = n_image + text.len() - 1;
        let next = argmax_lowest(&logits[last * vocab..(last + 1) * vocab]) as u32;
        if next == EOS {
            break;
        }
        text.push(next);
        out.push(next);
    }
    Ok(out)
}

/// Greedy response text for an (image, instruction) prompt.
pub fn respond<T: Real>(model: &Mllm<T>, image: &GridImage, instruction: &str) -> Result<String> {
    let prompt = encode_prompt(instruction)?;
    let ids = greedy_decode(model, &image.render(), &prompt, MAX_RESPONSE_TOKENS)?;
    detokenize(&ids)
}

/// Fraction of samples whose decoded response equals the reference exactly.
pub fn eval_accuracy<T: Real>(model: &Mllm<T>, heldout: &[Sample]) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::EmptyEval);
    }
    let mut hits = 0usize;
    for s in heldout {
        if respond(model, &s.image, &s.instruction)? == s.response {
            hits += 1;
        }
    }
    Ok(hits as f64 / heldout.len() as f64)
}

/// Per-sample response-position `KL(π_T ‖ π_S)` for each held-out sample.
pub fn per_sample_kl<T: Real>(student: &Mllm<T>, teacher: &Mllm<T>, heldout: &[Sample]) -> Result<Vec<f64>> {
    if student.vocab_size() != teacher.vocab_size() {
        return Err(Error::ShapeError(format!(
            "student vocab {} != teacher vocab {}",
            student.vocab_size(),
            teacher.vocab_size()
        )));
    }
    let vocab = student.vocab_size();
    heldout
        .iter()
        .map(|s| {
            let enc = EncodedSample::from_sample(s)?;
            let seq = enc.scored(student.config.n_image_tokens);
            let ls = student.forward_logits(&seq.image, &seq.text)?;
            if teacher.config.n_image_tokens != student.config.n_image_tokens {
                return Err(Error::ShapeError("teacher and student image token counts differ".into()));
            }
            let lt = teacher.forward_logits(&seq.image, &seq.text)?;
            kd_kl_loss(TokenLogits::new(&ls, vocab)?, TokenLogits::new(&lt, vocab)?, &seq.mask)
        })
        .collect()
}

/// Mean over held-out samples of the response-position KL to the teacher.
pub fn eval_kl_to_teacher<T: Real>(student: &Mllm<T>, teacher: &Mllm<T>, heldout: &[Sample]) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::EmptyEval);
    }
    let kls = per_sample_kl(student, teacher, heldout)?;
    Ok(kls.iter().sum::<f64>() / kls.len() as f64)
}

/// A prompt together with the response a model produced for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedOutput {
    pub image: GridImage,
    pub instruction: String,
    pub response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HallucinationRates {
    /// Fraction of responses with at least one false claim.
    pub resp_rate: f64,
    /// Fraction of color/shape/number mentions that are false.
    pub ment_rate: f64,
}

pub fn hallucination_rates(outputs: &[DecodedOutput]) -> Result<HallucinationRates> {
    if outputs.is_empty() {
        return Err(Error::EmptyEval);
    }
    let (mut bad, mut mentions, mut false_mentions) = (0usize, 0usize, 0usize);
    for o in outputs {
        let v = verify(&o.image, &o.instruction, &o.response)?;
        bad += v.hallucinated() as usize;
        mentions += v.mentions.len();
        false_mentions += v.false_mentions();
    }
    Ok(HallucinationRates {
        resp_rate: bad as f64 / outputs.len() as f64,
        ment_rate: if mentions == 0 {
            0.0
        } else {
            false_mentions as f64 / mentions as f64
        },
    })
}

pub fn decode_all<T: Real>(model: &Mllm<T>, prompts: &[Sample]) -> Result<Vec<DecodedOutput>> {
    prompts
        .iter()
        .map(|s| {
            Ok(DecodedOutput {
                image: s.image.clone(),
                instruction: s.instruction.clone(),
                response: respond(model, &s.image, &s.instruction)?,
            })
        })
        .collect()
}

pub fn eval_hallucination<T: Real>(model: &Mllm<T>, prompts: &[Sample]) -> Result<HallucinationRates> {
    hallucination_rates(&decode_all(model, prompts)?)
}

/// Mean implicit reward margin over preference pairs.
pub fn eval_margin<T: Real>(student: &Mllm<T>, teacher: &Mllm<T>, pairs: &[PreferencePair], beta: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyEval);
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidBeta(beta));
    }
    let n_image = student.config.n_image_tokens;
    let mut total = 0.0;
    for p in pairs {
        total += pair_margin(student, teacher, &encode_pair(p, n_image)?, beta)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Expert utilization per sparse layer over every position of the
/// teacher-forced held-out sequences. Empty for dense models.
pub fn eval_utilization<T: Real>(model: &Mllm<T>, heldout: &[Sample]) -> Result<Vec<UtilizationStats>> {
    let Some(moe) = model.moe_config() else {
        return Ok(Vec::new());
    };
    let mut counters: Vec<UtilizationCounter> = Vec::new();
    for s in heldout {
        let enc = EncodedSample::from_sample(s)?;
        let (_, trace) = model.forward_traced(&enc.image, &enc.tokens)?;
        for (layer, records) in trace.routing_records().into_iter().enumerate() {
            if counters.len() <= layer {
                counters.push(UtilizationCounter::new(moe.n_experts));
            }
            records.iter().for_each(|r| counters[layer].record(r));
        }
    }
    if counters.is_empty() {
        return Err(Error::EmptyBatch);
    }
    counters.iter().map(UtilizationCounter::stats).collect()
}

/// Held-out data used for the end-of-stage evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    /// Multi-task samples scored for accuracy and KL.
    pub samples: Vec<Sample>,
    /// Preference pairs; their prompts double as hallucination probes.
    pub pairs: Vec<PreferencePair>,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub n_pairs: usize,
    pub seed: u64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    0.1
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 64,
            n_pairs: 64,
            seed: 1_000_003,
            beta: default_beta(),
        }
    }
}

impl EvalSet {
    pub fn synthetic(cfg: &EvalConfig, grid: &GridConfig) -> Result<Self> {
        Ok(Self {
            samples: gen_samples(cfg.seed, cfg.n_samples, &TaskMix::MULTITASK, grid)?,
            pairs: gen_preference_pairs(cfg.seed, cfg.n_pairs, &CorruptionMix::default(), grid)?,
            beta: cfg.beta,
        })
    }

    /// The prompts of the preference pairs with their reference answers.
    pub fn probes(&self) -> Vec<Sample> {
        probes_from_pairs(&self.pairs)
    }
}

pub fn probes_from_pairs(pairs: &[PreferencePair]) -> Vec<Sample> {
    pairs
        .iter()
        .map(|p| Sample {
            image: p.image.clone(),
            instruction: p.instruction.clone(),
            response: p.chosen.clone(),
            tag: p.corruption.task(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: String,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub stage: String,
    pub step: usize,
    pub kl_to_teacher: Option<f64>,
    pub accuracy: f64,
    pub hallucination_rate: f64,
    pub mention_hallucination_rate: f64,
    pub mean_margin: Option<f64>,
    pub utilization_entropy: Vec<f64>,
}

impl EvalRecord {
    pub fn compute(
        stage: &str,
        step: usize,
        student: &Mllm<f32>,
        teacher: Option<&Mllm<f32>>,
        set: &EvalSet,
    ) -> Result<Self> {
        let probes = set.probes();
        let hall = eval_hallucination(student, &probes)?;
        let (kl, margin) = match teacher {
            Some(t) => (
                Some(eval_kl_to_teacher(student, t, &set.samples)?),
                Some(eval_margin(student, t, &set.pairs, set.beta)?),
            ),
            None => (None, None),
        };
        Ok(Self {
            stage: stage.into(),
            step,
            kl_to_teacher: kl,
            accuracy: eval_accuracy(student, &set.samples)?,
            hallucination_rate: hall.resp_rate,
            mention_hallucination_rate: hall.ment_rate,
            mean_margin: margin,
            utilization_entropy: eval_utilization(student, &set.samples)?
                .iter()
                .map(|u| u.entropy)
                .collect(),
        })
    }
}

/// Per-step training series and end-of-stage evaluations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl MetricsReport {
    pub fn extend(&mut self, other: MetricsReport) {
        self.steps.extend(other.steps);
        self.evals.extend(other.evals);
    }

    /// Flattened `(step, metric, value)` rows, in a fixed order.
    pub fn rows(&self) -> Vec<(usize, String, f64)> {
        let mut rows = Vec::new();
        for s in &self.steps {
            rows.push((s.step, format!("{}/loss", s.stage), s.loss));
            rows.push((s.step, format!("{}/lr", s.stage), s.lr));
        }
        for e in &self.evals {
            let p = &e.stage;
            if let Some(kl) = e.kl_to_teacher {
                rows.push((e.step, format!("{p}/kl_to_teacher"), kl));
            }
            rows.push((e.step, format!("{p}/accuracy"), e.accuracy));
            rows.push((e.step, format!("{p}/hallucination_rate"), e.hallucination_rate));
            rows.push((e.step, format!("{p}/mention_hallucination_rate"), e.mention_hallucination_rate));
            if let Some(m) = e.mean_margin {
                rows.push((e.step, format!("{p}/mean_margin"), m));
            }
            for (layer, h) in e.utilization_entropy.iter().enumerate() {
                rows.push((e.step, format!("{p}/utilization_entropy/{layer}"), *h));
            }
        }
        rows
    }
}
