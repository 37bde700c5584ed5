//! Vision stub, adaptor and language backbone composed into one model.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::adaptor::{Adaptor, AdaptorTrace};
use crate::model::config::ModelConfig;
use crate::model::lm::{self, LmTrace, TransformerLM};
use crate::model::params::{ParamGroup, ParamGroups, ParamMut, ParamRef, Params};
use crate::model::vision::{PixelGrid, VisionStub};
use crate::moe::{self, MoeConfig, RoutingRecord};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Mllm<T> {
    pub config: ModelConfig,
    pub vision: VisionStub<T>,
    pub adaptor: Adaptor<T>,
    pub lm: TransformerLM<T>,
}

#[derive(Debug, Clone)]
pub struct MllmTrace<T> {
    adaptor: AdaptorTrace<T>,
    lm: LmTrace<T>,
}

impl<T: Real> MllmTrace<T> {
    pub fn routing_records(&self) -> Vec<Vec<RoutingRecord>> {
        self.lm.routing_records()
    }
}

impl<T: Real> Mllm<T> {
    /// Deterministic initialization from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let vision = VisionStub::new(config.n_image_tokens, config.patch_dim, config.d_vision, &mut rng);
        let adaptor = Adaptor::new(config.d_vision, config.d_model, &mut rng);
        let lm = TransformerLM::new(&config, &mut rng);
        Ok(Self {
            config,
            vision,
            adaptor,
            lm,
        })
    }

    /// Zero-filled model with the given layout.
    pub fn skeleton(config: ModelConfig, moe: Option<MoeConfig>) -> Result<Self> {
        let mut m = Self::new(config)?.zeros_like();
        m.lm = lm::skeleton(&config, moe)?;
        Ok(m)
    }

    pub fn encode_image(&self, image: &PixelGrid) -> Result<Vec<T>> {
        self.vision.encode_image(image)
    }

    pub fn image_tokens(&self, image: &PixelGrid) -> Result<Vec<T>> {
        self.adaptor.adapt(&self.vision.encode_image(image)?)
    }

    pub fn forward_logits(&self, image: &PixelGrid, text: &[u32]) -> Result<Vec<T>> {
        let tokens = self.image_tokens(image)?;
        self.lm.forward_logits(&tokens, text)
    }

    pub fn forward_traced(&self, image: &PixelGrid, text: &[u32]) -> Result<(Vec<T>, MllmTrace<T>)> {
        let features = self.vision.encode_image(image)?;
        let (tokens, adaptor) = self.adaptor.adapt_traced(&features)?;
        let (logits, lm) = self.lm.forward_traced(&tokens, text)?;
        Ok((logits, MllmTrace { adaptor, lm }))
    }

    /// Accumulates parameter gradients into `grad`. The vision stub gets none.
    pub fn backward(&self, trace: &MllmTrace<T>, dlogits: &[T], grad: &mut Mllm<T>) {
        let dtokens = self.lm.backward(&trace.lm, dlogits, &mut grad.lm);
        self.adaptor.backward(&trace.adaptor, &dtokens, &mut grad.adaptor);
    }

    pub fn upcycle(&self, cfg: MoeConfig) -> Result<Self> {
        Ok(Self {
            config: self.config,
            vision: self.vision.clone(),
            adaptor: self.adaptor.clone(),
            lm: moe::upcycle(&self.lm, cfg)?,
        })
    }

    pub fn is_sparse(&self) -> bool {
        self.lm.is_sparse()
    }

    pub fn moe_config(&self) -> Option<MoeConfig> {
        self.lm.moe_config()
    }

    pub fn vocab_size(&self) -> usize {
        self.lm.vocab_size()
    }

    pub fn params(&self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        self.collect("", ParamGroup::Phi, &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        self.collect_mut("", ParamGroup::Phi, &mut out);
        out
    }

    pub fn param_groups(&self) -> ParamGroups {
        ParamGroups::from_refs(&self.params())
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            vision: self.vision.zeros_like(),
            adaptor: self.adaptor.zeros_like(),
            lm: self.lm.zeros_like(),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.tensor.fill_zero();
        }
    }

    pub fn cast<U: Real>(&self) -> Mllm<U> {
        Mllm {
            config: self.config,
            vision: self.vision.cast(),
            adaptor: self.adaptor.cast(),
            lm: self.lm.cast(),
        }
    }
}

impl<T> Params<T> for Mllm<T> {
    fn collect<'a>(&'a self, _: &str, _: ParamGroup, out: &mut Vec<ParamRef<'a, T>>) {
        self.vision.collect("vision", ParamGroup::Chi, out);
        self.adaptor.collect("adaptor", ParamGroup::Omega, out);
        self.lm.collect("lm", ParamGroup::Phi, out);
    }

    fn collect_mut<'a>(&'a mut self, _: &str, _: ParamGroup, out: &mut Vec<ParamMut<'a, T>>) {
        self.vision.collect_mut("vision", ParamGroup::Chi, out);
        self.adaptor.collect_mut("adaptor", ParamGroup::Omega, out);
        self.lm.collect_mut("lm", ParamGroup::Phi, out);
    }
}
