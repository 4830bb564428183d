mod common;

use common::*;
use pixeltext::model::{forward, Element, ModelConfig, Params, SequenceInput};
use pixeltext::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sequences(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<SequenceInput> {
    vec![pixel_example(6, cfg, rng).input, text_example(8, cfg, rng).input, pair_example(4, 5, cfg, rng).input]
}

fn perturb(el: &Element, rng: &mut ChaCha8Rng, vocab: usize) -> Element {
    match el {
        Element::Token(t) => Element::Token((*t + 1 + rng.random_range(0..vocab as u32 - 1)) % vocab as u32),
        Element::Patch(p) => Element::Patch(p.iter().map(|v| (v + rng.random_range(0.1..0.9)) % 1.0).collect()),
    }
}

#[test]
fn matches_reference_decoder() {
    let cfg = ModelConfig::tiny();
    let p = perturbed_params(&cfg, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for input in sequences(&cfg, &mut rng) {
        let fast = forward(&input, &p, &cfg).unwrap();
        assert!(max_abs_diff(&fast, &reference_forward(&input, &p, &cfg)) < 1e-10);
    }
}

#[test]
fn grouped_heads_equal_duplicated_heads() {
    let cfg = ModelConfig { n_kv_heads: 4, ..ModelConfig::tiny() };
    let p = perturbed_params(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for input in sequences(&cfg, &mut rng) {
        let fast = forward(&input, &p, &cfg).unwrap();
        assert!(max_abs_diff(&fast, &reference_forward(&input, &p, &cfg)) < 1e-10);
    }
    let one_kv = ModelConfig { n_kv_heads: 1, ..ModelConfig::tiny() };
    let p = perturbed_params(&one_kv, 5);
    let input = text_example(9, &one_kv, &mut rng).input;
    assert!(max_abs_diff(&forward(&input, &p, &one_kv).unwrap(), &reference_forward(&input, &p, &one_kv)) < 1e-10);
}

#[test]
fn future_positions_never_leak() {
    let cfg = ModelConfig::tiny();
    let p = perturbed_params(&cfg, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = cfg.hidden_size;
    for input in sequences(&cfg, &mut rng) {
        let base = forward(&input, &p, &cfg).unwrap();
        for j in 0..input.len() {
            let mut changed = input.clone();
            changed.elements[j] = perturb(&input.elements[j], &mut rng, cfg.vocab_size);
            let out = forward(&changed, &p, &cfg).unwrap();
            assert_eq!(&out[..j * d], &base[..j * d], "position {j} leaked backwards");
            assert_ne!(&out[j * d..(j + 1) * d], &base[j * d..(j + 1) * d]);
        }
    }
}

#[test]
fn masked_keys_have_no_influence() {
    let cfg = ModelConfig::tiny();
    let p = perturbed_params(&cfg, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = cfg.hidden_size;
    let mut input = pair_example(4, 5, &cfg, &mut rng).input;
    input.attention_mask[2] = false;
    input.attention_mask[7] = false;
    let base = forward(&input, &p, &cfg).unwrap();
    for j in [2, 7] {
        let mut changed = input.clone();
        changed.elements[j] = perturb(&input.elements[j], &mut rng, cfg.vocab_size);
        let out = forward(&changed, &p, &cfg).unwrap();
        for i in (0..input.len()).filter(|&i| i != j) {
            assert_eq!(&out[i * d..(i + 1) * d], &base[i * d..(i + 1) * d]);
        }
    }
}

#[test]
fn fully_masked_prefix_gets_zero_context() {
    let cfg = ModelConfig::tiny();
    let p = perturbed_params(&cfg, 10);
    let input = SequenceInput::from_tokens(&[1, 2, 3], &[false, false, true]);
    let out = forward(&input, &p, &cfg).unwrap();
    assert!(out.iter().all(|v| v.is_finite()));
    assert!(max_abs_diff(&out, &reference_forward(&input, &p, &cfg)) < 1e-10);
}

#[test]
fn bad_inputs_are_rejected() {
    let cfg = ModelConfig::tiny();
    let p: Params<f64> = Params::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
    let long = SequenceInput::from_tokens(&[1; 33], &[true; 33]);
    assert!(matches!(forward(&long, &p, &cfg), Err(Error::Length { len: 33, max: 32 })));
    let unknown = SequenceInput::from_tokens(&[99], &[true]);
    assert!(matches!(forward(&unknown, &p, &cfg), Err(Error::UnknownId { id: 99, .. })));
}
