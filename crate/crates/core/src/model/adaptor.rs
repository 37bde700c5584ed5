//! Two-layer MLP mapping vision features into the token embedding space.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::params::{join, ParamGroup, ParamMut, ParamRef, Params};
use crate::real::{silu, silu_grad, Real};
use crate::tensor::Linear;

#[derive(Debug, Clone, PartialEq)]
pub struct Adaptor<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AdaptorTrace<T> {
    input: Vec<T>,
    pre: Vec<T>,
    hidden: Vec<T>,
    rows: usize,
}

impl<T: Real> Adaptor<T> {
    /// Hidden width equals `d_model`.
    pub fn new<R: Rng>(d_vision: usize, d_model: usize, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(d_vision, d_model, true, rng),
            fc2: Linear::new(d_model, d_model, true, rng),
        }
    }

    pub fn d_in(&self) -> usize {
        self.fc1.d_in()
    }

    pub fn d_out(&self) -> usize {
        self.fc2.d_out()
    }

    pub fn adapt(&self, features: &[T]) -> Result<Vec<T>> {
        self.adapt_traced(features).map(|(out, _)| out)
    }

    pub fn adapt_traced(&self, features: &[T]) -> Result<(Vec<T>, AdaptorTrace<T>)> {
        let d_in = self.d_in();
        if features.is_empty() || features.len() % d_in != 0 {
            return Err(Error::InvalidFeatures(format!(
                "{} values is not a whole number of width-{d_in} rows",
                features.len()
            )));
        }
        let rows = features.len() / d_in;
        let pre = self.fc1.forward(features, rows);
        let hidden: Vec<T> = pre.iter().map(|&x| silu(x)).collect();
        let out = self.fc2.forward(&hidden, rows);
        Ok((
            out,
            AdaptorTrace {
                input: features.to_vec(),
                pre,
                hidden,
                rows,
            },
        ))
    }

    /// Accumulates into `grad`; the input gradient is discarded because the
    /// vision stub upstream is never trained.
    pub fn backward(&self, trace: &AdaptorTrace<T>, dout: &[T], grad: &mut Adaptor<T>) {
        let dh = self.fc2.backward(&trace.hidden, dout, trace.rows, &mut grad.fc2);
        let dpre: Vec<T> = dh
            .iter()
            .zip(&trace.pre)
            .map(|(&g, &x)| g * silu_grad(x))
            .collect();
        self.fc1.backward(&trace.input, &dpre, trace.rows, &mut grad.fc1);
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
        }
    }

    pub fn cast<U: Real>(&self) -> Adaptor<U> {
        Adaptor {
            fc1: self.fc1.cast(),
            fc2: self.fc2.cast(),
        }
    }
}

impl<T> Params<T> for Adaptor<T> {
    fn collect<'a>(&'a self, prefix: &str, _: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        self.fc1.collect(&join(prefix, "fc1"), ParamGroup::Omega, out);
        self.fc2.collect(&join(prefix, "fc2"), ParamGroup::Omega, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, _: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        self.fc1.collect_mut(&join(prefix, "fc1"), ParamGroup::Omega, out);
        self.fc2.collect_mut(&join(prefix, "fc2"), ParamGroup::Omega, out);
    }
}
