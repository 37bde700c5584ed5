//! Sparse mixture-of-experts feed-forward layer.
//!
//! Routing probabilities are `softmax(x · W_r)`. The `k` largest keep their
//! raw values and every other entry is zeroed, with no renormalization, so
//! the masked weights may sum to less than one. The layer output is
//! `Σ_i r̃_i · E_i(x)` and only the selected experts are evaluated.
//! Ties are broken towards the lower expert index.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::{FeedForward, FeedForwardTrace};
use crate::model::lm::{FeedForwardKind, TransformerLM};
use crate::model::params::{join, push, push_mut, ParamGroup, ParamMut, ParamRef, Params};
use crate::real::Real;
use crate::tensor::Tensor;

/// Number of experts and how many are active per token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoeConfig {
    pub n_experts: usize,
    pub top_k: usize,
}

impl MoeConfig {
    /// Four experts, two active.
    pub const E4T2: MoeConfig = MoeConfig {
        n_experts: 4,
        top_k: 2,
    };
    /// Four experts, one active: same activated parameter count as a dense FFN.
    pub const E4T1: MoeConfig = MoeConfig {
        n_experts: 4,
        top_k: 1,
    };

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.top_k > self.n_experts {
            return Err(Error::InvalidK {
                k: self.top_k,
                n: self.n_experts,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Router<T> {
    /// `[d_model, n_experts]`
    pub weight: Tensor<T>,
}

impl<T: Real> Router<T> {
    pub fn zeros(d_model: usize, n_experts: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[d_model, n_experts]),
        }
    }

    pub fn n_experts(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_model(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Routing logits `x · W_r`.
    pub fn logits(&self, x: &[T]) -> Vec<T> {
        let n = self.n_experts();
        let w = self.weight.data();
        let mut out = vec![T::zero(); n];
        for (a, &xa) in x.iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(&w[a * n..(a + 1) * n]) {
                *o += xa * wv;
            }
        }
        out
    }

    /// Routing probabilities for one token.
    pub fn route(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.d_model() {
            return Err(Error::ShapeError(format!(
                "token width {} != router width {}",
                x.len(),
                self.d_model()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericError("router input"));
        }
        let r = softmax(&self.logits(x));
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericError("router output"));
        }
        Ok(r)
    }
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut out: Vec<T> = logits.iter().map(|&l| (l - max).exp_libm()).collect();
    let z: T = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

/// Indices of the `k` largest entries, largest first, lower index on ties.
pub fn top_k_indices<T: Real>(r: &[T], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > r.len() {
        return Err(Error::InvalidK { k, n: r.len() });
    }
    let mut idx: Vec<usize> = (0..r.len()).collect();
    idx.sort_by(|&a, &b| {
        r[b].partial_cmp(&r[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(idx)
}

/// Keeps the `k` largest routing values in place and zeros the rest.
pub fn top_k_select<T: Real>(r: &[T], k: usize) -> Result<Vec<T>> {
    let keep = top_k_indices(r, k)?;
    let mut out = vec![T::zero(); r.len()];
    for i in keep {
        out[i] = r[i];
    }
    Ok(out)
}

/// Routing decision for one token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub dense: Vec<f64>,
    pub masked: Vec<f64>,
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoeLayer<T> {
    pub experts: Vec<FeedForward<T>>,
    pub router: Router<T>,
    pub top_k: usize,
}

#[derive(Debug, Clone)]
struct ExpertTrace<T> {
    tokens: Vec<usize>,
    trace: FeedForwardTrace<T>,
    output: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct MoeTrace<T> {
    input: Vec<T>,
    probs: Vec<T>,
    selected: Vec<usize>,
    experts: Vec<Option<ExpertTrace<T>>>,
    rows: usize,
}

impl<T: Real> MoeTrace<T> {
    pub fn routing_records(&self) -> Vec<RoutingRecord> {
        let n = self.experts.len();
        let k = self.selected.len() / self.rows.max(1);
        (0..self.rows)
            .map(|t| {
                let dense: Vec<f64> = self.probs[t * n..(t + 1) * n]
                    .iter()
                    .map(|v| v.as_f64())
                    .collect();
                let selected = self.selected[t * k..(t + 1) * k].to_vec();
                let mut masked = vec![0.0; n];
                for &i in &selected {
                    masked[i] = dense[i];
                }
                RoutingRecord {
                    dense,
                    masked,
                    selected,
                }
            })
            .collect()
    }
}

impl<T: Real> MoeLayer<T> {
    /// `n_experts` exact copies of `ffn` behind a zero router.
    pub fn upcycled(ffn: &FeedForward<T>, cfg: MoeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            experts: vec![ffn.clone(); cfg.n_experts],
            router: Router::zeros(ffn.up.d_in(), cfg.n_experts),
            top_k: cfg.top_k,
        })
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn config(&self) -> MoeConfig {
        MoeConfig {
            n_experts: self.n_experts(),
            top_k: self.top_k,
        }
    }

    /// Output for a single token vector.
    pub fn moe_forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.forward(x, 1).map(|(y, _)| y)
    }

    pub fn forward(&self, x: &[T], rows: usize) -> Result<(Vec<T>, MoeTrace<T>)> {
        let d = self.router.d_model();
        let n = self.n_experts();
        let k = self.top_k;
        if k == 0 || k > n {
            return Err(Error::InvalidK { k, n });
        }
        let mut probs = Vec::with_capacity(rows * n);
        let mut selected = Vec::with_capacity(rows * k);
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n];
        for t in 0..rows {
            let r = self.router.route(&x[t * d..(t + 1) * d])?;
            let sel = top_k_indices(&r, k)?;
            for &e in &sel {
                assigned[e].push(t);
            }
            probs.extend_from_slice(&r);
            selected.extend_from_slice(&sel);
        }
        let mut y = vec![T::zero(); rows * d];
        let mut experts = Vec::with_capacity(n);
        for (e, tokens) in assigned.into_iter().enumerate() {
            if tokens.is_empty() {
                experts.push(None);
                continue;
            }
            let mut gathered = Vec::with_capacity(tokens.len() * d);
            for &t in &tokens {
                gathered.extend_from_slice(&x[t * d..(t + 1) * d]);
            }
            let (out, trace) = self.experts[e].forward(&gathered, tokens.len());
            for (row, &t) in tokens.iter().enumerate() {
                let w = probs[t * n + e];
                for (yo, &o) in y[t * d..(t + 1) * d]
                    .iter_mut()
                    .zip(&out[row * d..(row + 1) * d])
                {
                    *yo += w * o;
                }
            }
            experts.push(Some(ExpertTrace {
                tokens,
                trace,
                output: out,
            }));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericError("expert output"));
        }
        Ok((
            y,
            MoeTrace {
                input: x.to_vec(),
                probs,
                selected,
                experts,
                rows,
            },
        ))
    }

    /// Gradients flow through the selected routing weights and the selected
    /// experts only; unselected experts receive nothing for that token.
    pub fn backward(&self, tr: &MoeTrace<T>, dy: &[T], grad: &mut MoeLayer<T>) -> Vec<T> {
        let d = self.router.d_model();
        let n = self.n_experts();
        let k = self.top_k;
        let mut dx = vec![T::zero(); tr.rows * d];
        let mut dr = vec![T::zero(); tr.rows * n];
        for (e, et) in tr.experts.iter().enumerate() {
            let Some(et) = et else { continue };
            let mut dout = Vec::with_capacity(et.tokens.len() * d);
            for (row, &t) in et.tokens.iter().enumerate() {
                let w = tr.probs[t * n + e];
                let dyt = &dy[t * d..(t + 1) * d];
                let out = &et.output[row * d..(row + 1) * d];
                dr[t * n + e] = out.iter().zip(dyt).map(|(&a, &b)| a * b).sum();
                dout.extend(dyt.iter().map(|&g| w * g));
            }
            let dxe = self.experts[e].backward(&et.trace, &dout, &mut grad.experts[e]);
            for (row, &t) in et.tokens.iter().enumerate() {
                for (a, &b) in dx[t * d..(t + 1) * d]
                    .iter_mut()
                    .zip(&dxe[row * d..(row + 1) * d])
                {
                    *a += b;
                }
            }
        }
        let w = self.router.weight.data();
        let gw = grad.router.weight.data_mut();
        let mut dlogit = vec![T::zero(); n];
        for t in 0..tr.rows {
            let r = &tr.probs[t * n..(t + 1) * n];
            let drt = &dr[t * n..(t + 1) * n];
            let weighted: T = tr.selected[t * k..(t + 1) * k]
                .iter()
                .map(|&i| r[i] * drt[i])
                .sum();
            for j in 0..n {
                dlogit[j] = r[j] * (drt[j] - weighted);
            }
            let xt = &tr.input[t * d..(t + 1) * d];
            let dxt = &mut dx[t * d..(t + 1) * d];
            for a in 0..d {
                let wr = &w[a * n..(a + 1) * n];
                let gr = &mut gw[a * n..(a + 1) * n];
                let mut acc = T::zero();
                for j in 0..n {
                    gr[j] += xt[a] * dlogit[j];
                    acc += wr[j] * dlogit[j];
                }
                dxt[a] += acc;
            }
        }
        dx
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            experts: self.experts.iter().map(FeedForward::zeros_like).collect(),
            router: Router {
                weight: self.router.weight.zeros_like(),
            },
            top_k: self.top_k,
        }
    }

    pub fn cast<U: Real>(&self) -> MoeLayer<U> {
        MoeLayer {
            experts: self.experts.iter().map(FeedForward::cast).collect(),
            router: Router {
                weight: self.router.weight.cast(),
            },
            top_k: self.top_k,
        }
    }
}

impl<T> Params<T> for MoeLayer<T> {
    fn collect<'a>(&'a self, prefix: &str, _: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        for (i, e) in self.experts.iter().enumerate() {
            e.collect(&join(prefix, &format!("experts.{i}")), ParamGroup::PhiE, out);
        }
        push(out, prefix, "router", ParamGroup::PhiE, &self.router.weight);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, _: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        for (i, e) in self.experts.iter_mut().enumerate() {
            e.collect_mut(&join(prefix, &format!("experts.{i}")), ParamGroup::PhiE, out);
        }
        push_mut(out, prefix, "router", ParamGroup::PhiE, &mut self.router.weight);
    }
}

/// Replaces every dense feed-forward sublayer by an MoE layer whose experts
/// copy it exactly; every other parameter is carried over bit-for-bit.
pub fn upcycle<T: Real>(dense: &TransformerLM<T>, cfg: MoeConfig) -> Result<TransformerLM<T>> {
    cfg.validate()?;
    if dense.is_sparse() {
        return Err(Error::AlreadySparse);
    }
    let mut sparse = dense.clone();
    for block in &mut sparse.blocks {
        if let FeedForwardKind::Dense(ffn) = &block.ffn {
            block.ffn = FeedForwardKind::Moe(MoeLayer::upcycled(ffn, cfg)?);
        }
    }
    Ok(sparse)
}

/// Per-expert selection frequency and its entropy for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationStats {
    /// Fraction of tokens that selected each expert; sums to `k`.
    pub frequencies: Vec<f64>,
    /// Entropy (nats) of the normalized frequencies, in `[0, ln N]`.
    pub entropy: f64,
    pub tokens: u64,
}

/// Mergeable selection counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtilizationCounter {
    counts: Vec<u64>,
    tokens: u64,
}

impl UtilizationCounter {
    pub fn new(n_experts: usize) -> Self {
        Self {
            counts: vec![0; n_experts],
            tokens: 0,
        }
    }

    pub fn record(&mut self, rec: &RoutingRecord) {
        for &i in &rec.selected {
            self.counts[i] += 1;
        }
        self.tokens += 1;
    }

    pub fn merge(&mut self, other: &UtilizationCounter) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.tokens += other.tokens;
    }

    pub fn stats(&self) -> Result<UtilizationStats> {
        if self.tokens == 0 {
            return Err(Error::EmptyBatch);
        }
        let tokens = self.tokens as f64;
        let frequencies: Vec<f64> = self.counts.iter().map(|&c| c as f64 / tokens).collect();
        let total: f64 = self.counts.iter().map(|&c| c as f64).sum();
        let entropy = -self
            .counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                p * libm::log(p)
            })
            .sum::<f64>();
        Ok(UtilizationStats {
            frequencies,
            entropy: entropy.max(0.0),
            tokens: self.tokens,
        })
    }
}

pub fn utilization_stats(records: &[RoutingRecord], n_experts: usize) -> Result<UtilizationStats> {
    let mut c = UtilizationCounter::new(n_experts);
    records.iter().for_each(|r| c.record(r));
    c.stats()
}
