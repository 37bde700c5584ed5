//! Decoder-only language backbone.
//!
//! Image tokens occupy the first positions of the sequence, text tokens
//! follow. Each block is pre-norm attention then pre-norm feed-forward, both
//! residual. There is no final norm: with zero blocks the logits are exactly
//! the head applied to token plus position embeddings.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::layers::{
    Attention, AttentionTrace, FeedForward, FeedForwardTrace, RmsNorm, RmsNormTrace,
};
use crate::model::params::{join, push, push_mut, ParamGroup, ParamMut, ParamRef, Params};
use crate::moe::{MoeConfig, MoeLayer, MoeTrace, RoutingRecord};
use crate::real::Real;
use crate::tensor::{Linear, Tensor};

const EMBED_BOUND: f64 = 0.17;

#[derive(Debug, Clone, PartialEq)]
pub enum FeedForwardKind<T> {
    Dense(FeedForward<T>),
    Moe(MoeLayer<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub norm1: RmsNorm<T>,
    pub attn: Attention<T>,
    pub norm2: RmsNorm<T>,
    pub ffn: FeedForwardKind<T>,
}

#[derive(Debug, Clone)]
enum FfnTrace<T> {
    Dense(FeedForwardTrace<T>),
    Moe(MoeTrace<T>),
}

#[derive(Debug, Clone)]
struct BlockTrace<T> {
    norm1: RmsNormTrace<T>,
    attn: AttentionTrace<T>,
    norm2: RmsNormTrace<T>,
    ffn: FfnTrace<T>,
}

impl<T: Real> Block<T> {
    fn forward(&self, x: &[T], seq: usize) -> Result<(Vec<T>, BlockTrace<T>)> {
        let (n1, t_n1) = self.norm1.forward(x);
        let (a, t_attn) = self.attn.forward(&n1, seq);
        let x1: Vec<T> = x.iter().zip(&a).map(|(&u, &v)| u + v).collect();
        let (n2, t_n2) = self.norm2.forward(&x1);
        let (f, t_ffn) = match &self.ffn {
            FeedForwardKind::Dense(ffn) => {
                let (f, t) = ffn.forward(&n2, seq);
                (f, FfnTrace::Dense(t))
            }
            FeedForwardKind::Moe(moe) => {
                let (f, t) = moe.forward(&n2, seq)?;
                (f, FfnTrace::Moe(t))
            }
        };
        let x2 = x1.iter().zip(&f).map(|(&u, &v)| u + v).collect();
        Ok((
            x2,
            BlockTrace {
                norm1: t_n1,
                attn: t_attn,
                norm2: t_n2,
                ffn: t_ffn,
            },
        ))
    }

    fn backward(&self, tr: &BlockTrace<T>, dx2: &[T], grad: &mut Block<T>) -> Vec<T> {
        let dn2 = match (&self.ffn, &tr.ffn, &mut grad.ffn) {
            (FeedForwardKind::Dense(f), FfnTrace::Dense(t), FeedForwardKind::Dense(g)) => {
                f.backward(t, dx2, g)
            }
            (FeedForwardKind::Moe(m), FfnTrace::Moe(t), FeedForwardKind::Moe(g)) => {
                m.backward(t, dx2, g)
            }
            _ => unreachable!("gradient buffer does not match block layout"),
        };
        let mut dx1 = self.norm2.backward(&tr.norm2, &dn2, &mut grad.norm2);
        dx1.iter_mut().zip(dx2).for_each(|(a, &b)| *a += b);
        let da = self.attn.backward(&tr.attn, &dx1, &mut grad.attn);
        let mut dx0 = self.norm1.backward(&tr.norm1, &da, &mut grad.norm1);
        dx0.iter_mut().zip(&dx1).for_each(|(a, &b)| *a += b);
        dx0
    }

    fn zeros_like(&self) -> Self {
        Self {
            norm1: self.norm1.zeros_like(),
            attn: self.attn.zeros_like(),
            norm2: self.norm2.zeros_like(),
            ffn: match &self.ffn {
                FeedForwardKind::Dense(f) => FeedForwardKind::Dense(f.zeros_like()),
                FeedForwardKind::Moe(m) => FeedForwardKind::Moe(m.zeros_like()),
            },
        }
    }

    fn cast<U: Real>(&self) -> Block<U> {
        Block {
            norm1: self.norm1.cast(),
            attn: self.attn.cast(),
            norm2: self.norm2.cast(),
            ffn: match &self.ffn {
                FeedForwardKind::Dense(f) => FeedForwardKind::Dense(f.cast()),
                FeedForwardKind::Moe(m) => FeedForwardKind::Moe(m.cast()),
            },
        }
    }
}

impl<T> Params<T> for Block<T> {
    fn collect<'a>(&'a self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        self.norm1.collect(&join(prefix, "norm1"), group, out);
        self.attn.collect(&join(prefix, "attn"), group, out);
        self.norm2.collect(&join(prefix, "norm2"), group, out);
        match &self.ffn {
            FeedForwardKind::Dense(f) => f.collect(&join(prefix, "ffn"), group, out),
            FeedForwardKind::Moe(m) => m.collect(&join(prefix, "moe"), ParamGroup::PhiE, out),
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        self.norm1.collect_mut(&join(prefix, "norm1"), group, out);
        self.attn.collect_mut(&join(prefix, "attn"), group, out);
        self.norm2.collect_mut(&join(prefix, "norm2"), group, out);
        match &mut self.ffn {
            FeedForwardKind::Dense(f) => f.collect_mut(&join(prefix, "ffn"), group, out),
            FeedForwardKind::Moe(m) => m.collect_mut(&join(prefix, "moe"), ParamGroup::PhiE, out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLM<T> {
    /// `[vocab, d_model]`
    pub tok_emb: Tensor<T>,
    /// `[max_seq, d_model]`
    pub pos_emb: Tensor<T>,
    pub blocks: Vec<Block<T>>,
    pub head: Linear<T>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct LmTrace<T> {
    text: Vec<u32>,
    n_image: usize,
    blocks: Vec<BlockTrace<T>>,
    last_hidden: Vec<T>,
}

impl<T: Real> LmTrace<T> {
    /// Routing records per sparse layer, in block order.
    pub fn routing_records(&self) -> Vec<Vec<RoutingRecord>> {
        self.blocks
            .iter()
            .filter_map(|b| match &b.ffn {
                FfnTrace::Moe(t) => Some(t.routing_records()),
                FfnTrace::Dense(_) => None,
            })
            .collect()
    }
}

impl<T: Real> TransformerLM<T> {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let out_scale = 1.0 / Float::sqrt((2 * cfg.n_layers.max(1)) as f64);
        let tok_emb = Tensor::uniform(&[cfg.vocab_size, d], EMBED_BOUND, rng);
        let pos_emb = Tensor::uniform(&[cfg.max_seq, d], EMBED_BOUND, rng);
        let blocks = (0..cfg.n_layers)
            .map(|_| Block {
                norm1: RmsNorm::new(d),
                attn: Attention::new(d, cfg.n_heads, out_scale, rng),
                norm2: RmsNorm::new(d),
                ffn: FeedForwardKind::Dense(FeedForward::new(d, cfg.d_ff, out_scale, rng)),
            })
            .collect();
        let head = Linear::new(d, cfg.vocab_size, true, rng);
        Self {
            tok_emb,
            pos_emb,
            blocks,
            head,
        }
    }

    pub fn d_model(&self) -> usize {
        self.tok_emb.shape()[1]
    }

    pub fn vocab_size(&self) -> usize {
        self.tok_emb.shape()[0]
    }

    pub fn max_seq(&self) -> usize {
        self.pos_emb.shape()[0]
    }

    pub fn is_sparse(&self) -> bool {
        self.blocks
            .iter()
            .any(|b| matches!(b.ffn, FeedForwardKind::Moe(_)))
    }

    pub fn moe_config(&self) -> Option<MoeConfig> {
        self.blocks.iter().find_map(|b| match &b.ffn {
            FeedForwardKind::Moe(m) => Some(m.config()),
            FeedForwardKind::Dense(_) => None,
        })
    }

    /// Logits `[n_image + text.len(), vocab]`; position `p` scores the token
    /// at `p + 1`.
    pub fn forward_logits(&self, image_tokens: &[T], text: &[u32]) -> Result<Vec<T>> {
        self.forward_traced(image_tokens, text).map(|(l, _)| l)
    }

    pub fn forward_traced(&self, image_tokens: &[T], text: &[u32]) -> Result<(Vec<T>, LmTrace<T>)> {
        let d = self.d_model();
        if image_tokens.len() % d != 0 {
            return Err(Error::ShapeError(format!(
                "image tokens of {} values are not width {d}",
                image_tokens.len()
            )));
        }
        let n_image = image_tokens.len() / d;
        let seq = n_image + text.len();
        if seq > self.max_seq() {
            return Err(Error::SequenceTooLong {
                len: seq,
                max: self.max_seq(),
            });
        }
        if seq == 0 {
            return Err(Error::ShapeError("empty sequence".into()));
        }
        let vocab = self.vocab_size();
        if let Some(&bad) = text.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::InvalidLabel { label: bad, vocab });
        }
        let mut x = Vec::with_capacity(seq * d);
        x.extend_from_slice(image_tokens);
        let emb = self.tok_emb.data();
        for &t in text {
            let t = t as usize;
            x.extend_from_slice(&emb[t * d..(t + 1) * d]);
        }
        for (xi, &p) in x.iter_mut().zip(self.pos_emb.data()) {
            *xi += p;
        }
        let mut traces = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, tr) = block.forward(&x, seq)?;
            traces.push(tr);
            x = next;
        }
        let logits = self.head.forward(&x, seq);
        Ok((
            logits,
            LmTrace {
                text: text.to_vec(),
                n_image,
                blocks: traces,
                last_hidden: x,
            },
        ))
    }

    /// Accumulates into `grad` and returns the gradient for the image tokens.
    pub fn backward(&self, tr: &LmTrace<T>, dlogits: &[T], grad: &mut TransformerLM<T>) -> Vec<T> {
        let d = self.d_model();
        let seq = tr.n_image + tr.text.len();
        let mut dx = self.head.backward(&tr.last_hidden, dlogits, seq, &mut grad.head);
        for ((block, bt), gb) in self
            .blocks
            .iter()
            .zip(&tr.blocks)
            .zip(grad.blocks.iter_mut())
            .rev()
        {
            dx = block.backward(bt, &dx, gb);
        }
        for (g, &v) in grad.pos_emb.data_mut().iter_mut().zip(&dx) {
            *g += v;
        }
        let ge = grad.tok_emb.data_mut();
        for (i, &t) in tr.text.iter().enumerate() {
            let t = t as usize;
            let src = &dx[(tr.n_image + i) * d..(tr.n_image + i + 1) * d];
            for (g, &v) in ge[t * d..(t + 1) * d].iter_mut().zip(src) {
                *g += v;
            }
        }
        dx.truncate(tr.n_image * d);
        dx
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tok_emb: self.tok_emb.zeros_like(),
            pos_emb: self.pos_emb.zeros_like(),
            blocks: self.blocks.iter().map(Block::zeros_like).collect(),
            head: self.head.zeros_like(),
        }
    }

    pub fn cast<U: Real>(&self) -> TransformerLM<U> {
        TransformerLM {
            tok_emb: self.tok_emb.cast(),
            pos_emb: self.pos_emb.cast(),
            blocks: self.blocks.iter().map(Block::cast).collect(),
            head: self.head.cast(),
        }
    }
}

impl<T> Params<T> for TransformerLM<T> {
    fn collect<'a>(&'a self, prefix: &str, _: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        let g = ParamGroup::Phi;
        push(out, prefix, "tok_emb", g, &self.tok_emb);
        push(out, prefix, "pos_emb", g, &self.pos_emb);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&join(prefix, &format!("blocks.{i}")), g, out);
        }
        self.head.collect(&join(prefix, "head"), g, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, _: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        let g = ParamGroup::Phi;
        push_mut(out, prefix, "tok_emb", g, &mut self.tok_emb);
        push_mut(out, prefix, "pos_emb", g, &mut self.pos_emb);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_mut(&join(prefix, &format!("blocks.{i}")), g, out);
        }
        self.head.collect_mut(&join(prefix, "head"), g, out);
    }
}

/// Zero-filled LM with the given layout; loading a checkpoint fills it.
pub fn skeleton<T: Real>(cfg: &ModelConfig, moe: Option<MoeConfig>) -> Result<TransformerLM<T>> {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut lm = TransformerLM::<T>::new(cfg, &mut rng);
    if let Some(m) = moe {
        lm = crate::moe::upcycle(&lm, m)?;
    }
    Ok(lm.zeros_like())
}

impl<T: Real> TransformerLM<T> {
    /// Parameter count of one dense feed-forward block (one expert when sparse).
    pub fn ffn_params_per_layer(&self) -> usize {
        self.blocks
            .first()
            .map(|b| match &b.ffn {
                FeedForwardKind::Dense(f) => f.num_params(),
                FeedForwardKind::Moe(m) => m.experts[0].num_params(),
            })
            .unwrap_or(0)
    }
}
