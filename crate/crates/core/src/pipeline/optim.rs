//! AdamW restricted to a chosen subset of parameters.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::model::{Mllm, ParamGroup};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.0,
        }
    }
}

/// Decides whether a named parameter is updated.
pub type Selector<'a> = &'a dyn Fn(&str, ParamGroup) -> bool;

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state. Moments exist only for the selected parameters, so
/// everything else is left bit-identical by [`AdamW::step`].
pub struct AdamW {
    cfg: AdamConfig,
    t: u64,
    state: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new<T: Real>(cfg: AdamConfig, model: &Mllm<T>, select: Selector<'_>) -> Self {
        let state = model
            .params()
            .into_iter()
            .filter(|p| select(&p.name, p.group))
            .map(|p| {
                let n = p.tensor.numel();
                (p.name, Moments { m: vec![0.0; n], v: vec![0.0; n] })
            })
            .collect();
        Self { cfg, t: 0, state }
    }

    pub fn trainable(&self) -> impl Iterator<Item = &str> {
        self.state.keys().map(String::as_str)
    }

    pub fn num_trainable(&self) -> usize {
        self.state.values().map(|m| m.m.len()).sum()
    }

    /// Global L2 norm of the selected gradients.
    pub fn grad_norm<T: Real>(&self, grad: &Mllm<T>) -> f64 {
        let mut sq = 0.0;
        for p in grad.params() {
            if self.state.contains_key(&p.name) {
                sq += p.tensor.data().iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>();
            }
        }
        Float::sqrt(sq)
    }

    /// One update with gradients multiplied by `grad_scale` first.
    pub fn step<T: Real>(&mut self, model: &mut Mllm<T>, grad: &Mllm<T>, lr: f64, grad_scale: f64) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - libm::pow(c.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.t as f64);
        let grads = grad.params();
        for (p, g) in model.params_mut().into_iter().zip(grads) {
            debug_assert_eq!(p.name, g.name);
            let Some(st) = self.state.get_mut(&p.name) else {
                continue;
            };
            let w = p.tensor.data_mut();
            for (i, (wi, gi)) in w.iter_mut().zip(g.tensor.data()).enumerate() {
                let gi = gi.as_f64() * grad_scale;
                st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * gi;
                st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = st.m[i] / bc1;
                let vhat = st.v[i] / bc2;
                let mut x = wi.as_f64();
                x -= lr * (mhat / (Float::sqrt(vhat) + c.eps) + c.weight_decay * x);
                *wi = T::of(x);
            }
        }
    }
}
