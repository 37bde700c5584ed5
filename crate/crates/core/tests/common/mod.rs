#![allow(dead_code)]

use moekd_core::losses::ScoredSequence;
use moekd_core::model::PixelGrid;
use moekd_core::{Mllm, ModelConfig, MoeConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A few hundred parameters: small enough for exhaustive finite differences.
pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: 6,
        d_model: 4,
        n_layers: 1,
        n_heads: 2,
        d_ff: 8,
        max_seq: 10,
        n_image_tokens: 2,
        d_vision: 3,
        patch_dim: 4,
        seed,
    }
}

pub fn random_image(cfg: &ModelConfig, rng: &mut impl Rng) -> PixelGrid {
    let mut px = PixelGrid::zeros(cfg.n_image_tokens, cfg.patch_dim);
    px.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    px
}

/// `text` scored against its own next tokens, response = text from `resp`.
pub fn scored(cfg: &ModelConfig, image: PixelGrid, text: Vec<u32>, resp: usize) -> ScoredSequence {
    let n = cfg.n_image_tokens;
    let total = n + text.len();
    let mut labels = vec![0; total];
    let mut mask = vec![false; total];
    for p in 0..total {
        let next = p + 1;
        if next >= n && next < total {
            labels[p] = text[next - n];
            mask[p] = next - n >= resp;
        }
    }
    ScoredSequence { image, text, labels, mask }
}

pub fn random_tokens(n: usize, vocab: usize, rng: &mut impl Rng) -> Vec<u32> {
    (0..n).map(|_| rng.gen_range(0..vocab as u32)).collect()
}

/// Upcycled model with every expert and the router perturbed, so experts
/// differ and routing has clear gaps.
pub fn tiny_sparse(seed: u64, moe: MoeConfig) -> Mllm<f64> {
    let mut m = Mllm::<f64>::new(tiny_config(seed)).unwrap().upcycle(moe).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for p in m.params_mut() {
        if p.name.contains(".moe.") {
            let scale = if p.name.ends_with("router") { 1.5 } else { 0.2 };
            for v in p.tensor.data_mut() {
                *v += rng.gen_range(-scale..scale);
            }
        }
    }
    m
}
