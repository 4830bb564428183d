#![allow(dead_code)]

use pixeltext::model::{ModelConfig, Params, SequenceInput};
use pixeltext::patchio::{PatchSequence, TARGET_EPS};
use pixeltext::pretrain::batch::{build_pair_sequence, sequence_loss_mask};
use pixeltext::pretrain::{batch_loss_and_grads, BatchLoss, TrainExample};
use pixeltext::render::PatchRole;
use pixeltext::tokenizer::TokenSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tiny-config parameters with every tensor perturbed away from its
/// initial pattern (unit gains, zero biases).
pub fn perturbed_params(cfg: &ModelConfig, seed: u64) -> Params<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Params<f64> = Params::init(cfg, &mut rng);
    for (_, t) in p.tensors_mut() {
        for v in t.data.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    p
}

pub fn random_patches(n_content: usize, dim: usize, rng: &mut impl Rng) -> PatchSequence {
    let mut data: Vec<f32> = (0..n_content * dim).map(|_| rng.random_range(0.0..1.0)).collect();
    data.extend(vec![0.0; dim]);
    let mut roles = vec![PatchRole::Content; n_content];
    roles.push(PatchRole::Eos);
    PatchSequence::from_roles(dim, data, roles)
}

pub fn pixel_example(n_content: usize, cfg: &ModelConfig, rng: &mut impl Rng) -> TrainExample {
    let p = random_patches(n_content, cfg.patch_dim, rng);
    build_pair_sequence(&p, &TokenSequence::new(vec![]), cfg.max_positions, TARGET_EPS).unwrap()
}

pub fn text_example(n: usize, cfg: &ModelConfig, rng: &mut impl Rng) -> TrainExample {
    let ids: Vec<u32> = (0..n).map(|_| rng.random_range(0..cfg.vocab_size as u32)).collect();
    let t = TokenSequence { attention_mask: vec![true; n], ids };
    let input = SequenceInput::from_tokens(&t.ids, &t.attention_mask);
    let mask = sequence_loss_mask(&[], &t.attention_mask);
    TrainExample::from_input(input, &mask, cfg.patch_dim, TARGET_EPS).unwrap()
}

pub fn pair_example(n_content: usize, n_tokens: usize, cfg: &ModelConfig, rng: &mut impl Rng) -> TrainExample {
    let p = random_patches(n_content, cfg.patch_dim, rng);
    let ids: Vec<u32> = (0..n_tokens).map(|_| rng.random_range(0..cfg.vocab_size as u32)).collect();
    let t = TokenSequence { attention_mask: vec![true; n_tokens], ids };
    build_pair_sequence(&p, &t, cfg.max_positions, TARGET_EPS).unwrap()
}

/// Worst per-tensor relative error `|a - n| / max(|a|, |n|)` (2-norms)
/// between analytic and central-difference gradients of the batch loss.
pub fn gradient_check(cfg: &ModelConfig, params: &Params<f64>, batch: &[&TrainExample], h: f64) -> Vec<(String, f64)> {
    let loss = |p: &Params<f64>| -> f64 {
        let (l, _): (BatchLoss, _) = batch_loss_and_grads(p, cfg, batch).unwrap();
        l.total()
    };
    let (_, analytic) = batch_loss_and_grads(params, cfg, batch).unwrap();
    let mut work = params.clone();
    let n_tensors = params.tensors().len();
    let mut out = Vec::with_capacity(n_tensors);
    for ti in 0..n_tensors {
        let (name, len) = {
            let ts = params.tensors();
            (ts[ti].0.clone(), ts[ti].1.len())
        };
        let a = analytic.tensors()[ti].1.data.clone();
        let mut numeric = vec![0.0; len];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = params.tensors()[ti].1.data[j];
            work.tensors_mut()[ti].1.data[j] = orig + h;
            let up = loss(&work);
            work.tensors_mut()[ti].1.data[j] = orig - h;
            let down = loss(&work);
            work.tensors_mut()[ti].1.data[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let denom = na.max(nn);
        out.push((name, if denom == 0.0 { 0.0 } else { diff / denom }));
    }
    out
}

use pixeltext::glyphs::Glyphs;

/// Variable-width test font: advance depends on the code point, ink on a
/// fixed hash of (char, row, col).
pub struct RaggedFont;

pub fn ragged_advance(ch: char) -> usize {
    3 + (ch as usize * 7) % 9
}

impl Glyphs for RaggedFont {
    fn cell_height(&self) -> usize {
        16
    }
    fn advance(&self, ch: char) -> usize {
        ragged_advance(ch)
    }
    fn ink(&self, ch: char, row: usize, col: usize) -> bool {
        ch != ' ' && (ch as usize + 3 * row + 5 * col).is_multiple_of(4)
    }
}

/// Reads one of the checked-in golden strips as `(height, width, rgb)`.
pub fn golden(name: &str) -> (usize, usize, Vec<u8>) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    pixeltext::render::RenderedStrip::read_golden(std::fs::File::open(path).unwrap()).unwrap()
}

pub fn random_ascii_doc(rng: &mut impl Rng, max_words: usize) -> String {
    let n = rng.random_range(1..=max_words);
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..10);
            (0..len).map(|_| rng.random_range(0x21u8..0x7f) as char).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

use pixeltext::model::Element;

fn vec_mat(x: &[f64], w: &[f64], out_dim: usize) -> Vec<f64> {
    let mut y = vec![0.0; out_dim];
    for (i, &xi) in x.iter().enumerate() {
        for j in 0..out_dim {
            y[j] += xi * w[i * out_dim + j];
        }
    }
    y
}

fn rms(x: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let s = 1.0 / (ms + eps).sqrt();
    x.iter().zip(g).map(|(v, w)| v * s * w).collect()
}

fn rotate(x: &mut [f64], pos: usize, theta: f64) {
    let d = x.len();
    for i in 0..d / 2 {
        let a = pos as f64 * theta.powf(-((2 * i) as f64) / d as f64);
        let (x0, x1) = (x[2 * i], x[2 * i + 1]);
        x[2 * i] = x0 * a.cos() - x1 * a.sin();
        x[2 * i + 1] = x0 * a.sin() + x1 * a.cos();
    }
}

/// Expand grouped key/value projections so each query head owns a copy.
fn expand_kv(w: &[f64], cfg: &ModelConfig) -> Vec<f64> {
    let (d, hd, kw) = (cfg.hidden_size, cfg.head_dim(), cfg.kv_dim());
    let qw = cfg.q_dim();
    let mut out = vec![0.0; d * qw];
    for r in 0..d {
        for h in 0..cfg.n_heads {
            let g = h / (cfg.n_heads / cfg.n_kv_heads);
            for c in 0..hd {
                out[r * qw + h * hd + c] = w[r * kw + g * hd + c];
            }
        }
    }
    out
}

/// Plain multi-head reference decoder: one key/value head per query head,
/// explicit loops, no caching.
pub fn reference_forward(input: &SequenceInput, p: &Params<f64>, cfg: &ModelConfig) -> Vec<Vec<f64>> {
    let (d, hd, nh, qw) = (cfg.hidden_size, cfg.head_dim(), cfg.n_heads, cfg.q_dim());
    let n = input.len();
    let mut x: Vec<Vec<f64>> = input
        .elements
        .iter()
        .map(|e| match e {
            Element::Token(t) => p.tok_embed.data[*t as usize * d..(*t as usize + 1) * d].to_vec(),
            Element::Patch(v) => {
                let xs: Vec<f64> = v.iter().map(|&a| a as f64).collect();
                vec_mat(&xs, &p.patch_proj_w.data, d).iter().zip(&p.patch_proj_b.data).map(|(a, b)| a + b).collect()
            }
        })
        .collect();
    for l in &p.layers {
        let wk = expand_kv(&l.wk.data, cfg);
        let wv = expand_kv(&l.wv.data, cfg);
        let h: Vec<Vec<f64>> = x.iter().map(|r| rms(r, &l.attn_norm.data, cfg.rms_eps)).collect();
        let mut q: Vec<Vec<f64>> = h.iter().map(|r| vec_mat(r, &l.wq.data, qw)).collect();
        let mut k: Vec<Vec<f64>> = h.iter().map(|r| vec_mat(r, &wk, qw)).collect();
        let v: Vec<Vec<f64>> = h.iter().map(|r| vec_mat(r, &wv, qw)).collect();
        for i in 0..n {
            for head in 0..nh {
                rotate(&mut q[i][head * hd..(head + 1) * hd], i, cfg.rope_theta);
                rotate(&mut k[i][head * hd..(head + 1) * hd], i, cfg.rope_theta);
            }
        }
        let mut ctx = vec![vec![0.0; qw]; n];
        for head in 0..nh {
            let sl = head * hd..(head + 1) * hd;
            for i in 0..n {
                let keys: Vec<usize> = (0..=i).filter(|&j| input.attention_mask[j]).collect();
                if keys.is_empty() {
                    continue;
                }
                let s: Vec<f64> = keys
                    .iter()
                    .map(|&j| q[i][sl.clone()].iter().zip(&k[j][sl.clone()]).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
                for (&j, sv) in keys.iter().zip(&s) {
                    let w = (sv - m).exp() / z;
                    for c in sl.clone() {
                        ctx[i][c] += w * v[j][c];
                    }
                }
            }
        }
        for i in 0..n {
            let o = vec_mat(&ctx[i], &l.wo.data, d);
            x[i].iter_mut().zip(o).for_each(|(a, b)| *a += b);
            let h2 = rms(&x[i], &l.ffn_norm.data, cfg.rms_eps);
            let g = vec_mat(&h2, &l.w_gate.data, cfg.intermediate_size);
            let u = vec_mat(&h2, &l.w_up.data, cfg.intermediate_size);
            let act: Vec<f64> = g.iter().zip(&u).map(|(a, b)| a / (1.0 + (-a).exp()) * b).collect();
            let f = vec_mat(&act, &l.w_down.data, d);
            x[i].iter_mut().zip(f).for_each(|(a, b)| *a += b);
        }
    }
    x.iter().map(|r| rms(r, &p.final_norm.data, cfg.rms_eps)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

const FILLER: [&str; 12] = ["the", "a", "big", "old", "sunny", "quiet", "green", "small", "bright", "cold", "day", "town"];

/// Two-class toy task: one or two filler words, then `yes` (pos) or `no` (neg).
pub fn toy_task_table(n: usize, seed: u64) -> pixeltext::finetune::TaskTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|i| {
            let pos = i % 2 == 1;
            let k = rng.random_range(1..3);
            let mut words: Vec<&str> = (0..k).map(|_| FILLER[rng.random_range(0..FILLER.len())]).collect();
            words.push(if pos { "yes" } else { "no" });
            pixeltext::finetune::TaskRow { text_a: words.join(" "), text_b: None, label: if pos { "pos" } else { "neg" }.into() }
        })
        .collect();
    pixeltext::finetune::TaskTable { rows, has_pair: false }
}

/// Dyadic-valued weights whose three channel entries per pixel sum to a
/// multiple of 3, so channel averaging is exact.
pub fn dyadic_patch_projection(p: &mut Params<f64>, cfg: &ModelConfig, rng: &mut impl Rng) {
    let d = cfg.hidden_size;
    for px in 0..cfg.patch_dim / 3 {
        for j in 0..d {
            let a = rng.random_range(-20i32..20);
            let b = rng.random_range(-20i32..20);
            let c = 3 * rng.random_range(-10i32..10) - a - b;
            for (ch, v) in [a, b, c].into_iter().enumerate() {
                p.patch_proj_w.data[(px * 3 + ch) * d + j] = v as f64 / 64.0;
            }
        }
    }
}

pub fn oracle_fit(words: &[String], budget: usize) -> usize {
    let mut best = 0;
    for k in 0..=words.len() {
        let joined = words[..k].join(" ");
        if joined.chars().map(ragged_advance).sum::<usize>() <= budget {
            best = k;
        }
    }
    best
}

/// Luma with the rounding done in a different integer form.
pub fn luma_oracle(r: u8, g: u8, b: u8) -> u8 {
    let twice = 2 * (299 * r as u64 + 587 * g as u64 + 114 * b as u64);
    ((twice + 1000) / 2000) as u8
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

/// Rank by counting: 1 + strictly smaller + half the other ties.
pub fn brute_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let less = xs.iter().filter(|y| *y < x).count() as f64;
            let eq = xs.iter().filter(|y| *y == x).count() as f64;
            1.0 + less + (eq - 1.0) / 2.0
        })
        .collect()
}
