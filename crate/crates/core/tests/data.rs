//! Generators, verifier, tokenizer and batching.

use moekd_core::data::preference::Corruption;
use moekd_core::data::tasks::grid_with;
use moekd_core::data::*;
use moekd_core::losses::{d2s_loss, D2sWeights, TokenLogits};
use moekd_core::Mllm;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn grid() -> GridConfig {
    GridConfig::default()
}

#[test]
fn generation_is_a_pure_function_of_the_seed() {
    let g = grid();
    let a = gen_samples(0, 1000, &TaskMix::MULTITASK, &g).unwrap();
    assert_eq!(a, gen_samples(0, 1000, &TaskMix::MULTITASK, &g).unwrap());
    assert_ne!(a, gen_samples(1, 1000, &TaskMix::MULTITASK, &g).unwrap());
    let p = gen_preference_pairs(0, 300, &CorruptionMix::default(), &g).unwrap();
    assert_eq!(p, gen_preference_pairs(0, 300, &CorruptionMix::default(), &g).unwrap());
}

#[test]
fn task_mix_is_respected() {
    let mix = TaskMix { caption: 0.5, count: 0.5, locate: 0.0, compare: 0.0 };
    let s = gen_samples(3, 1000, &mix, &grid()).unwrap();
    let mut counts = BTreeMap::new();
    for x in &s {
        *counts.entry(x.tag).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), 2);
    for tag in [TaskTag::Caption, TaskTag::Count] {
        let c = counts[&tag] as f64;
        assert!((c - 500.0).abs() <= 50.0, "{tag:?}: {c}");
    }
    let bad = TaskMix { caption: 0.7, count: 0.7, locate: 0.0, compare: 0.0 };
    assert!(matches!(gen_samples(0, 10, &bad, &grid()), Err(moekd_core::Error::InvalidMix(_))));
    let neg = TaskMix { caption: 1.5, count: -0.5, locate: 0.0, compare: 0.0 };
    assert!(gen_samples(0, 10, &neg, &grid()).is_err());
}

#[test]
fn count_answers_match_an_independent_count() {
    let s = gen_samples(4, 2000, &TaskMix::MULTITASK, &grid()).unwrap();
    let mut seen = 0;
    for x in s.iter().filter(|x| x.tag == TaskTag::Count) {
        let color = Color::from_word(x.instruction.rsplit(' ').next().unwrap()).unwrap();
        let mut n = 0;
        for r in 0..x.image.rows() {
            for c in 0..x.image.cols() {
                n += x.image.get(r, c).is_some_and(|cell| cell.color == color) as usize;
            }
        }
        assert_eq!(x.response, n.to_string());
        seen += 1;
    }
    assert!(seen > 400);
}

#[test]
fn three_red_cells_answer_three() {
    use moekd_core::data::grid::Shape;
    let img = grid_with(
        &grid(),
        &[(0, 0, Color::Red, Shape::Circle), (1, 1, Color::Red, Shape::Square), (2, 2, Color::Red, Shape::Circle)],
    );
    assert_eq!(img.count_color(Color::Red), 3);
    assert!(!verify(&img, "how many red", "3").unwrap().hallucinated());
    assert!(verify(&img, "how many red", "4").unwrap().hallucinated());
}

#[test]
fn verifier_accepts_every_answer_and_rejects_every_corruption() {
    let g = grid();
    for x in gen_samples(5, 1000, &TaskMix::MULTITASK, &g).unwrap() {
        let v = verify(&x.image, &x.instruction, &x.response).unwrap();
        assert!(!v.hallucinated(), "{x:?}");
    }
    let pairs = gen_preference_pairs(6, 1000, &CorruptionMix::default(), &g).unwrap();
    for p in &pairs {
        assert_ne!(p.chosen, p.rejected);
        assert!(!verify(&p.image, &p.instruction, &p.chosen).unwrap().hallucinated(), "{p:?}");
        assert!(verify(&p.image, &p.instruction, &p.rejected).unwrap().hallucinated(), "{p:?}");
    }
    let kinds: std::collections::BTreeSet<_> = pairs.iter().map(|p| p.corruption).collect();
    assert_eq!(kinds.len(), Corruption::ALL.iter().filter(|&&c| CorruptionMix::default().weight(c) > 0.0).count());
}

#[test]
fn absent_object_corruption_names_an_absent_color() {
    let mix = CorruptionMix { absent_object: 1.0, wrong_count: 0.0, wrong_location: 0.0, wrong_comparison: 0.0 };
    for p in gen_preference_pairs(7, 300, &mix, &grid()).unwrap() {
        assert_eq!(p.corruption, Corruption::AbsentObject);
        let absent = p
            .rejected
            .split(' ')
            .filter_map(Color::from_word)
            .any(|c| !p.image.has_color(c));
        assert!(absent, "{p:?}");
    }
}

#[test]
fn count_corruptions_go_both_ways() {
    let mix = CorruptionMix { wrong_count: 1.0, absent_object: 0.0, wrong_location: 0.0, wrong_comparison: 0.0 };
    let (mut up, mut down) = (0, 0);
    for p in gen_preference_pairs(8, 400, &mix, &grid()).unwrap() {
        let (c, r): (i64, i64) = (p.chosen.parse().unwrap(), p.rejected.parse().unwrap());
        assert_eq!((c - r).abs(), 1);
        if r > c { up += 1 } else { down += 1 }
    }
    assert!(up > 100 && down > 100, "{up} up, {down} down");
}

#[test]
fn verifier_judges_mentions_individually() {
    use moekd_core::data::grid::Shape;
    let img = grid_with(&grid(), &[(0, 1, Color::Red, Shape::Square), (2, 0, Color::Blue, Shape::Circle)]);
    let v = verify(&img, "describe the image", "red circle and blue circle").unwrap();
    let truth: Vec<bool> = v.mentions.iter().map(|m| m.truthful).collect();
    assert_eq!(truth, vec![true, false, true, true]);
    let v = verify(&img, "where is the red square", "row 1 col 2").unwrap();
    assert_eq!(v.mentions.len(), 2);
    assert!(!v.hallucinated());
    assert!(verify(&img, "where is the red square", "row 1 col 1").unwrap().hallucinated());
    assert!(verify(&img, "are there more red or blue", "red").unwrap().hallucinated());
    assert!(!verify(&img, "are there more red or blue", "same").unwrap().hallucinated());
    assert!(verify(&img, "are there more red or green", "same").unwrap().hallucinated());
    assert!(verify(&img, "what is this", "red").is_err());
}

#[test]
fn tokenizer_round_trips_generated_text() {
    let g = grid();
    for x in gen_samples(9, 1000, &TaskMix::MULTITASK, &g).unwrap() {
        for t in [&x.instruction, &x.response] {
            assert_eq!(&detokenize(&tokenize(t).unwrap()).unwrap(), t);
        }
    }
    assert!(tokenize("red elephant").is_err());
    assert!(vocab_size() <= 64);
}

#[test]
fn masks_cover_exactly_the_response() {
    let n_image = grid().n_cells();
    for x in gen_samples(10, 200, &TaskMix::MULTITASK, &grid()).unwrap() {
        let e = EncodedSample::from_sample(&x).unwrap();
        let s = e.scored(n_image);
        let resp_len = tokenize(&x.response).unwrap().len() + 1;
        assert_eq!(s.mask.iter().filter(|&&m| m).count(), resp_len);
        for (p, &m) in s.mask.iter().enumerate() {
            // position p predicts text token p + 1 - n_image
            let in_response = p + 1 >= n_image + e.response_start && p + 1 < n_image + e.tokens.len();
            assert_eq!(m, in_response);
        }
    }
}

#[test]
fn epochs_visit_every_sample_once() {
    let a = epoch_batches(103, 16, 1, 0).unwrap();
    let mut all: Vec<usize> = a.iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..103).collect::<Vec<_>>());
    assert_eq!(a, epoch_batches(103, 16, 1, 0).unwrap());
    assert_ne!(a, epoch_batches(103, 16, 1, 1).unwrap());
    assert!(a.iter().take(6).all(|b| b.len() == 16));
    assert!(epoch_batches(10, 0, 1, 0).is_err());
}

#[test]
fn padding_never_reaches_a_loss() {
    let g = grid();
    let cfg = student_config();
    let m = Mllm::<f64>::new(cfg).unwrap();
    let t = Mllm::<f64>::new(moekd_core::ModelConfig { seed: 5, ..cfg }).unwrap();
    let samples = gen_samples(11, 6, &TaskMix::MULTITASK, &g).unwrap();
    let enc: Vec<EncodedSample> = samples.iter().map(|s| EncodedSample::from_sample(s).unwrap()).collect();
    let batch = PaddedBatch::new(&enc.iter().collect::<Vec<_>>(), cfg.n_image_tokens);
    let v = cfg.vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (i, e) in enc.iter().enumerate() {
        let padded = &batch.sequences[i];
        let plain = e.scored(cfg.n_image_tokens);
        assert_eq!(batch.trimmed(i, cfg.n_image_tokens), plain);
        let lp = m.forward_logits(&padded.image, &padded.text).unwrap();
        let lq = m.forward_logits(&plain.image, &plain.text).unwrap();
        // causal attention: real positions are unaffected by trailing pads
        assert_eq!(lp[..lq.len()], lq[..]);
        let ltp = t.forward_logits(&padded.image, &padded.text).unwrap();
        let mut noisy = lp.clone();
        for x in &mut noisy[lq.len()..] {
            *x = rng.gen_range(-100.0..100.0);
        }
        let w = D2sWeights::default();
        let teacher = TokenLogits::new(&ltp, v).unwrap();
        let a = d2s_loss(TokenLogits::new(&lp, v).unwrap(), teacher, &padded.labels, &padded.mask, w).unwrap();
        let b = d2s_loss(TokenLogits::new(&noisy, v).unwrap(), teacher, &padded.labels, &padded.mask, w).unwrap();
        assert_eq!(a, b);
    }
}

proptest! {
    #[test]
    fn any_seed_gives_verified_pairs(seed in any::<u64>()) {
        for p in gen_preference_pairs(seed, 8, &CorruptionMix::default(), &grid()).unwrap() {
            prop_assert!(verify(&p.image, &p.instruction, &p.rejected).unwrap().hallucinated());
            prop_assert!(!verify(&p.image, &p.instruction, &p.chosen).unwrap().hallucinated());
        }
    }

    #[test]
    fn rendering_is_one_hot_per_cell(seed in any::<u64>()) {
        let img = grid().random_grid(&mut ChaCha8Rng::seed_from_u64(seed));
        let px = img.render();
        prop_assert_eq!(px.n_patches, grid().n_cells());
        for r in 0..img.rows() {
            for c in 0..img.cols() {
                let patch = px.patch(r * img.cols() + c);
                let on: f32 = patch.iter().sum();
                let want = if img.get(r, c).is_some() { 4.0 } else { 2.0 };
                prop_assert_eq!(on, want);
            }
        }
    }
}
