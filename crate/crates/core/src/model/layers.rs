//! Building blocks of the language backbone.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::model::params::{join, push, push_mut, ParamGroup, ParamMut, ParamRef, Params};
use crate::real::{silu, silu_grad, Real};
use crate::tensor::{dot, Linear, Tensor};

const RMS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RmsNorm<T> {
    pub gain: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct RmsNormTrace<T> {
    input: Vec<T>,
    inv_rms: Vec<T>,
}

impl<T: Real> RmsNorm<T> {
    pub fn new(d: usize) -> Self {
        Self {
            gain: Tensor::full(&[d], T::one()),
        }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, RmsNormTrace<T>) {
        let d = self.gain.numel();
        let g = self.gain.data();
        let mut y = Vec::with_capacity(x.len());
        let mut inv_rms = Vec::with_capacity(x.len() / d);
        for row in x.chunks_exact(d) {
            let ms = row.iter().map(|&v| v * v).sum::<T>() / T::of(d as f64);
            let inv = T::one() / (ms + T::of(RMS_EPS)).sqrt();
            inv_rms.push(inv);
            y.extend(row.iter().zip(g).map(|(&v, &gi)| v * inv * gi));
        }
        (
            y,
            RmsNormTrace {
                input: x.to_vec(),
                inv_rms,
            },
        )
    }

    pub fn backward(&self, trace: &RmsNormTrace<T>, dy: &[T], grad: &mut RmsNorm<T>) -> Vec<T> {
        let d = self.gain.numel();
        let g = self.gain.data();
        let gg = grad.gain.data_mut();
        let mut dx = vec![T::zero(); dy.len()];
        for (r, ((xr, dyr), dxr)) in trace
            .input
            .chunks_exact(d)
            .zip(dy.chunks_exact(d))
            .zip(dx.chunks_exact_mut(d))
            .enumerate()
        {
            let inv = trace.inv_rms[r];
            let mut dot = T::zero();
            for i in 0..d {
                gg[i] += dyr[i] * xr[i] * inv;
                dot += g[i] * dyr[i] * xr[i];
            }
            let coef = dot * inv * inv * inv / T::of(d as f64);
            for i in 0..d {
                dxr[i] = g[i] * dyr[i] * inv - xr[i] * coef;
            }
        }
        dx
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            gain: self.gain.zeros_like(),
        }
    }

    pub fn cast<U: Real>(&self) -> RmsNorm<U> {
        RmsNorm {
            gain: self.gain.cast(),
        }
    }
}

impl<T> Params<T> for RmsNorm<T> {
    fn collect<'a>(&'a self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        push(out, prefix, "gain", group, &self.gain);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        push_mut(out, prefix, "gain", group, &mut self.gain);
    }
}

/// Causal multi-head self-attention without biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    pub n_heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionTrace<T> {
    input: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `[head, query, key]`, zero above the diagonal.
    probs: Vec<T>,
    mixed: Vec<T>,
    seq: usize,
}

impl<T: Real> Attention<T> {
    pub fn new<R: Rng>(d: usize, n_heads: usize, out_scale: f64, rng: &mut R) -> Self {
        let mut wo = Linear::new(d, d, false, rng);
        wo.weight
            .data_mut()
            .iter_mut()
            .for_each(|w| *w *= T::of(out_scale));
        Self {
            wq: Linear::new(d, d, false, rng),
            wk: Linear::new(d, d, false, rng),
            wv: Linear::new(d, d, false, rng),
            wo,
            n_heads,
        }
    }

    fn d(&self) -> usize {
        self.wq.d_in()
    }

    pub fn forward(&self, x: &[T], seq: usize) -> (Vec<T>, AttentionTrace<T>) {
        let d = self.d();
        let h = self.n_heads;
        let dh = d / h;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let q = self.wq.forward(x, seq);
        let k = self.wk.forward(x, seq);
        let v = self.wv.forward(x, seq);
        let mut probs = vec![T::zero(); h * seq * seq];
        let mut mixed = vec![T::zero(); seq * d];
        for head in 0..h {
            let off = head * dh;
            for i in 0..seq {
                let qi = &q[i * d + off..i * d + off + dh];
                let row = &mut probs[(head * seq + i) * seq..(head * seq + i + 1) * seq];
                let mut max = T::neg_infinity();
                for j in 0..=i {
                    let kj = &k[j * d + off..j * d + off + dh];
                    let s = dot(qi, kj) * scale;
                    row[j] = s;
                    if s > max {
                        max = s;
                    }
                }
                let mut z = T::zero();
                for p in row[..=i].iter_mut() {
                    *p = (*p - max).exp_libm();
                    z += *p;
                }
                for p in row[..=i].iter_mut() {
                    *p /= z;
                }
                let out = &mut mixed[i * d + off..i * d + off + dh];
                for j in 0..=i {
                    let p = row[j];
                    let vj = &v[j * d + off..j * d + off + dh];
                    for (o, &vv) in out.iter_mut().zip(vj) {
                        *o += p * vv;
                    }
                }
            }
        }
        let y = self.wo.forward(&mixed, seq);
        (
            y,
            AttentionTrace {
                input: x.to_vec(),
                q,
                k,
                v,
                probs,
                mixed,
                seq,
            },
        )
    }

    pub fn backward(&self, tr: &AttentionTrace<T>, dy: &[T], grad: &mut Attention<T>) -> Vec<T> {
        let d = self.d();
        let h = self.n_heads;
        let dh = d / h;
        let seq = tr.seq;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let dmixed = self.wo.backward(&tr.mixed, dy, seq, &mut grad.wo);
        let mut dq = vec![T::zero(); seq * d];
        let mut dk = vec![T::zero(); seq * d];
        let mut dv = vec![T::zero(); seq * d];
        let mut dp = vec![T::zero(); seq];
        for head in 0..h {
            let off = head * dh;
            for i in 0..seq {
                let row = &tr.probs[(head * seq + i) * seq..(head * seq + i + 1) * seq];
                let doi = &dmixed[i * d + off..i * d + off + dh];
                let mut weighted = T::zero();
                for j in 0..=i {
                    let vj = &tr.v[j * d + off..j * d + off + dh];
                    dp[j] = dot(doi, vj);
                    weighted += row[j] * dp[j];
                    let dvj = &mut dv[j * d + off..j * d + off + dh];
                    for (g, &o) in dvj.iter_mut().zip(doi) {
                        *g += row[j] * o;
                    }
                }
                for j in 0..=i {
                    let ds = row[j] * (dp[j] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    let kj = &tr.k[j * d + off..j * d + off + dh];
                    for (g, &kv) in dq[i * d + off..i * d + off + dh].iter_mut().zip(kj) {
                        *g += ds * kv;
                    }
                    let qi = &tr.q[i * d + off..i * d + off + dh];
                    for (g, &qv) in dk[j * d + off..j * d + off + dh].iter_mut().zip(qi) {
                        *g += ds * qv;
                    }
                }
            }
        }
        let mut dx = self.wq.backward(&tr.input, &dq, seq, &mut grad.wq);
        let dxk = self.wk.backward(&tr.input, &dk, seq, &mut grad.wk);
        let dxv = self.wv.backward(&tr.input, &dv, seq, &mut grad.wv);
        for ((a, b), c) in dx.iter_mut().zip(dxk).zip(dxv) {
            *a += b + c;
        }
        dx
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            wq: self.wq.zeros_like(),
            wk: self.wk.zeros_like(),
            wv: self.wv.zeros_like(),
            wo: self.wo.zeros_like(),
            n_heads: self.n_heads,
        }
    }

    pub fn cast<U: Real>(&self) -> Attention<U> {
        Attention {
            wq: self.wq.cast(),
            wk: self.wk.cast(),
            wv: self.wv.cast(),
            wo: self.wo.cast(),
            n_heads: self.n_heads,
        }
    }
}

impl<T> Params<T> for Attention<T> {
    fn collect<'a>(&'a self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        self.wq.collect(&join(prefix, "wq"), group, out);
        self.wk.collect(&join(prefix, "wk"), group, out);
        self.wv.collect(&join(prefix, "wv"), group, out);
        self.wo.collect(&join(prefix, "wo"), group, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        self.wq.collect_mut(&join(prefix, "wq"), group, out);
        self.wk.collect_mut(&join(prefix, "wk"), group, out);
        self.wv.collect_mut(&join(prefix, "wv"), group, out);
        self.wo.collect_mut(&join(prefix, "wo"), group, out);
    }
}

/// `down(silu(up(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<T> {
    pub up: Linear<T>,
    pub down: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct FeedForwardTrace<T> {
    input: Vec<T>,
    pre: Vec<T>,
    hidden: Vec<T>,
    rows: usize,
}

impl<T: Real> FeedForward<T> {
    pub fn new<R: Rng>(d: usize, d_ff: usize, out_scale: f64, rng: &mut R) -> Self {
        let up = Linear::new(d, d_ff, true, rng);
        let mut down = Linear::new(d_ff, d, true, rng);
        down.weight
            .data_mut()
            .iter_mut()
            .for_each(|w| *w *= T::of(out_scale));
        Self { up, down }
    }

    pub fn forward(&self, x: &[T], rows: usize) -> (Vec<T>, FeedForwardTrace<T>) {
        let pre = self.up.forward(x, rows);
        let hidden: Vec<T> = pre.iter().map(|&p| silu(p)).collect();
        let y = self.down.forward(&hidden, rows);
        (
            y,
            FeedForwardTrace {
                input: x.to_vec(),
                pre,
                hidden,
                rows,
            },
        )
    }

    pub fn backward(&self, tr: &FeedForwardTrace<T>, dy: &[T], grad: &mut FeedForward<T>) -> Vec<T> {
        let dh = self.down.backward(&tr.hidden, dy, tr.rows, &mut grad.down);
        let dpre: Vec<T> = dh
            .iter()
            .zip(&tr.pre)
            .map(|(&g, &p)| g * silu_grad(p))
            .collect();
        self.up.backward(&tr.input, &dpre, tr.rows, &mut grad.up)
    }

    pub fn num_params(&self) -> usize {
        self.up.weight.numel()
            + self.down.weight.numel()
            + self.up.bias.as_ref().map_or(0, Tensor::numel)
            + self.down.bias.as_ref().map_or(0, Tensor::numel)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            up: self.up.zeros_like(),
            down: self.down.zeros_like(),
        }
    }

    pub fn cast<U: Real>(&self) -> FeedForward<U> {
        FeedForward {
            up: self.up.cast(),
            down: self.down.cast(),
        }
    }
}

impl<T> Params<T> for FeedForward<T> {
    fn collect<'a>(&'a self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        self.up.collect(&join(prefix, "up"), group, out);
        self.down.collect(&join(prefix, "down"), group, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, group: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        self.up.collect_mut(&join(prefix, "up"), group, out);
        self.down.collect_mut(&join(prefix, "down"), group, out);
    }
}
