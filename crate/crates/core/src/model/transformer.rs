//! Decoder forward and backward passes.
//!
//! ```text
//! embed -> n_layers x [x += attn(rmsnorm(x)); x += swiglu(rmsnorm(x))] -> rmsnorm
//! ```
//!
//! Heads are applied separately: a regression head for next-patch
//! prediction and an (untied) classification head for next-token
//! prediction.

use super::config::ModelConfig;
use super::ops::{
    attend, attend_backward, project_qkv, rmsnorm_rows, rmsnorm_rows_backward, rope_frequencies, rope_rows,
    swiglu_act_backward, swiglu_rows,
};
use super::params::{LayerParams, Params};
use super::real::{matmul, matmul_a_bt, matmul_at_b_acc, Real};
use crate::patchio::PatchSequence;
use crate::shard::Modality;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Token(u32),
    /// Flattened patch scaled to `[0, 1]`.
    Patch(Vec<f32>),
}

/// One model input: elements at positions `0..len()` and a per-position
/// attention mask (false = never used as a key).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceInput {
    pub elements: Vec<Element>,
    pub attention_mask: Vec<bool>,
}

impl SequenceInput {
    pub fn from_tokens(ids: &[u32], attention_mask: &[bool]) -> Self {
        Self { elements: ids.iter().map(|&t| Element::Token(t)).collect(), attention_mask: attention_mask.to_vec() }
    }

    pub fn from_patches(seq: &PatchSequence) -> Self {
        Self {
            elements: (0..seq.len()).map(|i| Element::Patch(seq.patch(i).to_vec())).collect(),
            attention_mask: seq.attention_mask.clone(),
        }
    }

    /// `self` followed by `other`.
    pub fn concat(mut self, other: SequenceInput) -> Self {
        self.elements.extend(other.elements);
        self.attention_mask.extend(other.attention_mask);
        self
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn positions(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    pub fn modality_at(&self, i: usize) -> Modality {
        match self.elements[i] {
            Element::Token(_) => Modality::Text,
            Element::Patch(_) => Modality::Pixel,
        }
    }
}

struct LayerCache<T> {
    x_in: Vec<T>,
    h1: Vec<T>,
    inv1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    x_mid: Vec<T>,
    h2: Vec<T>,
    inv2: Vec<T>,
    gate: Vec<T>,
    up: Vec<T>,
    act: Vec<T>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache<T> {
    pub n: usize,
    layers: Vec<LayerCache<T>>,
    x_final: Vec<T>,
    inv_final: Vec<T>,
    /// Final normalized hidden states, `n x hidden_size`.
    pub hidden: Vec<T>,
}

/// Per-position input embedding, `n x hidden_size`.
pub fn embed<T: Real>(input: &SequenceInput, params: &Params<T>, cfg: &ModelConfig) -> Result<Vec<T>> {
    let d = cfg.hidden_size;
    let mut out = vec![T::zero(); input.len() * d];
    for (i, el) in input.elements.iter().enumerate() {
        let row = &mut out[i * d..(i + 1) * d];
        match el {
            Element::Token(id) => {
                let id = *id as usize;
                if id >= cfg.vocab_size {
                    return Err(Error::UnknownId { id: id as u32, vocab_size: cfg.vocab_size });
                }
                row.copy_from_slice(&params.tok_embed.data[id * d..(id + 1) * d]);
            }
            Element::Patch(p) => {
                if p.len() != cfg.patch_dim {
                    return Err(Error::Shape(format!("patch of dimension {} but model expects {}", p.len(), cfg.patch_dim)));
                }
                let x: Vec<T> = p.iter().map(|&v| T::from_f32(v).unwrap()).collect();
                row.copy_from_slice(&params.patch_proj_b.data);
                matmul(&x, &params.patch_proj_w.data, row, 1, cfg.patch_dim, d, true);
            }
        }
    }
    Ok(out)
}

fn check_input(input: &SequenceInput, cfg: &ModelConfig) -> Result<()> {
    cfg.validate()?;
    if input.len() > cfg.max_positions {
        return Err(Error::Length { len: input.len(), max: cfg.max_positions });
    }
    if input.attention_mask.len() != input.len() {
        return Err(Error::Shape(format!(
            "attention mask has {} entries for {} positions",
            input.attention_mask.len(),
            input.len()
        )));
    }
    Ok(())
}

fn layer_forward<T: Real>(
    x: Vec<T>,
    layer: &LayerParams<T>,
    cfg: &ModelConfig,
    positions: &[usize],
    key_mask: &[bool],
) -> (Vec<T>, LayerCache<T>) {
    let (n, d, inter) = (positions.len(), cfg.hidden_size, cfg.intermediate_size);
    let eps = T::from_f64c(cfg.rms_eps);
    let (h1, inv1) = rmsnorm_rows(&x, &layer.attn_norm.data, eps, d);
    let (q, k, v) = project_qkv(&h1, n, layer, cfg, positions);
    let (ctx, probs) = attend(&q, &k, &v, n, cfg, key_mask, true);
    let mut x_mid = x.clone();
    matmul(&ctx, &layer.wo.data, &mut x_mid, n, cfg.q_dim(), d, true);
    let (h2, inv2) = rmsnorm_rows(&x_mid, &layer.ffn_norm.data, eps, d);
    let (ffn, gate, up, act) = swiglu_rows(&h2, &layer.w_gate.data, &layer.w_up.data, &layer.w_down.data, n, d, inter);
    let mut x_out = x_mid.clone();
    x_out.iter_mut().zip(&ffn).for_each(|(a, &b)| *a += b);
    let cache = LayerCache { x_in: x, h1, inv1, q, k, v, probs, ctx, x_mid, h2, inv2, gate, up, act };
    (x_out, cache)
}

pub fn forward_cached<T: Real>(input: &SequenceInput, params: &Params<T>, cfg: &ModelConfig) -> Result<ForwardCache<T>> {
    check_input(input, cfg)?;
    let positions = input.positions();
    let mut x = embed(input, params, cfg)?;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for layer in &params.layers {
        let (next, cache) = layer_forward(x, layer, cfg, &positions, &input.attention_mask);
        layers.push(cache);
        x = next;
    }
    let (hidden, inv_final) = rmsnorm_rows(&x, &params.final_norm.data, T::from_f64c(cfg.rms_eps), cfg.hidden_size);
    Ok(ForwardCache { n: input.len(), layers, x_final: x, inv_final, hidden })
}

/// Final hidden states, `n x hidden_size`.
pub fn forward<T: Real>(input: &SequenceInput, params: &Params<T>, cfg: &ModelConfig) -> Result<Vec<T>> {
    Ok(forward_cached(input, params, cfg)?.hidden)
}

fn affine<T: Real>(hidden: &[T], w: &[T], b: &[T], d: usize, out_dim: usize) -> Result<Vec<T>> {
    if !hidden.len().is_multiple_of(d) || w.len() != d * out_dim || b.len() != out_dim {
        return Err(Error::Shape(format!("head expects rows of width {d}")));
    }
    let n = hidden.len() / d;
    let mut out: Vec<T> = b.iter().copied().cycle().take(n * out_dim).collect();
    matmul(hidden, w, &mut out, n, d, out_dim, true);
    Ok(out)
}

/// Predicted normalized next patch per position, `n x patch_dim`.
pub fn regression_head<T: Real>(hidden: &[T], params: &Params<T>, cfg: &ModelConfig) -> Result<Vec<T>> {
    affine(hidden, &params.reg_head_w.data, &params.reg_head_b.data, cfg.hidden_size, cfg.patch_dim)
}

/// Next-token logits per position, `n x vocab_size`.
pub fn classification_head<T: Real>(hidden: &[T], params: &Params<T>, cfg: &ModelConfig) -> Result<Vec<T>> {
    affine(hidden, &params.cls_head_w.data, &params.cls_head_b.data, cfg.hidden_size, cfg.vocab_size)
}

/// Gradient of an affine head; accumulates weight/bias grads and returns
/// the contribution to `d hidden`.
pub fn affine_backward<T: Real>(
    hidden: &[T],
    w: &[T],
    d_out: &[T],
    dw: &mut [T],
    db: &mut [T],
    d: usize,
    out_dim: usize,
    d_hidden: &mut [T],
) {
    let n = hidden.len() / d;
    matmul_at_b_acc(hidden, d_out, dw, n, d, out_dim);
    for row in d_out.chunks_exact(out_dim) {
        db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
    }
    matmul_a_bt(d_out, w, d_hidden, n, out_dim, d, true);
}

/// Backpropagate head gradients through the whole decoder into `grads`.
/// `d_reg` is `n x patch_dim`, `d_logits` is `n x vocab_size`; either may be
/// omitted, in which case that head receives no gradient at all.
pub fn backward<T: Real>(
    input: &SequenceInput,
    params: &Params<T>,
    cfg: &ModelConfig,
    cache: &ForwardCache<T>,
    d_reg: Option<&[T]>,
    d_logits: Option<&[T]>,
    grads: &mut Params<T>,
) {
    let (n, d) = (cache.n, cfg.hidden_size);
    let mut d_hidden = vec![T::zero(); n * d];
    if let Some(g) = d_reg {
        affine_backward(
            &cache.hidden,
            &params.reg_head_w.data,
            g,
            &mut grads.reg_head_w.data,
            &mut grads.reg_head_b.data,
            d,
            cfg.patch_dim,
            &mut d_hidden,
        );
    }
    if let Some(g) = d_logits {
        affine_backward(
            &cache.hidden,
            &params.cls_head_w.data,
            g,
            &mut grads.cls_head_w.data,
            &mut grads.cls_head_b.data,
            d,
            cfg.vocab_size,
            &mut d_hidden,
        );
    }
    backward_from_hidden(input, params, cfg, cache, &d_hidden, grads);
}

/// Backpropagate a gradient on the final hidden states.
pub fn backward_from_hidden<T: Real>(
    input: &SequenceInput,
    params: &Params<T>,
    cfg: &ModelConfig,
    cache: &ForwardCache<T>,
    d_hidden: &[T],
    grads: &mut Params<T>,
) {
    let (n, d, inter) = (cache.n, cfg.hidden_size, cfg.intermediate_size);
    let (qw, kw) = (cfg.q_dim(), cfg.kv_dim());
    let positions = input.positions();
    let freqs = rope_frequencies(cfg.head_dim(), cfg.rope_theta);

    let mut dx = vec![T::zero(); n * d];
    rmsnorm_rows_backward(
        &cache.x_final,
        &params.final_norm.data,
        &cache.inv_final,
        d_hidden,
        &mut dx,
        &mut grads.final_norm.data,
        d,
    );

    for (li, lc) in cache.layers.iter().enumerate().rev() {
        let lp = &params.layers[li];
        let lg = &mut grads.layers[li];

        // feed-forward branch: x_out = x_mid + W_down(act)
        let mut d_act = vec![T::zero(); n * inter];
        matmul_at_b_acc(&lc.act, &dx, &mut lg.w_down.data, n, inter, d);
        matmul_a_bt(&dx, &lp.w_down.data, &mut d_act, n, d, inter, false);
        let (d_gate, d_up) = swiglu_act_backward(&lc.gate, &lc.up, &d_act);
        matmul_at_b_acc(&lc.h2, &d_gate, &mut lg.w_gate.data, n, d, inter);
        matmul_at_b_acc(&lc.h2, &d_up, &mut lg.w_up.data, n, d, inter);
        let mut d_h2 = vec![T::zero(); n * d];
        matmul_a_bt(&d_gate, &lp.w_gate.data, &mut d_h2, n, inter, d, false);
        matmul_a_bt(&d_up, &lp.w_up.data, &mut d_h2, n, inter, d, true);
        // dx currently holds d x_out, which flows straight into d x_mid
        rmsnorm_rows_backward(&lc.x_mid, &lp.ffn_norm.data, &lc.inv2, &d_h2, &mut dx, &mut lg.ffn_norm.data, d);

        // attention branch: x_mid = x_in + ctx W_o
        matmul_at_b_acc(&lc.ctx, &dx, &mut lg.wo.data, n, qw, d);
        let mut d_ctx = vec![T::zero(); n * qw];
        matmul_a_bt(&dx, &lp.wo.data, &mut d_ctx, n, d, qw, false);
        let mut dq = vec![T::zero(); n * qw];
        let mut dk = vec![T::zero(); n * kw];
        let mut dv = vec![T::zero(); n * kw];
        attend_backward(&lc.q, &lc.k, &lc.v, &lc.probs, &d_ctx, n, cfg, &mut dq, &mut dk, &mut dv);
        rope_rows(&mut dq, &positions, cfg.n_heads, cfg.head_dim(), &freqs, -1.0);
        rope_rows(&mut dk, &positions, cfg.n_kv_heads, cfg.head_dim(), &freqs, -1.0);
        matmul_at_b_acc(&lc.h1, &dq, &mut lg.wq.data, n, d, qw);
        matmul_at_b_acc(&lc.h1, &dk, &mut lg.wk.data, n, d, kw);
        matmul_at_b_acc(&lc.h1, &dv, &mut lg.wv.data, n, d, kw);
        let mut d_h1 = vec![T::zero(); n * d];
        matmul_a_bt(&dq, &lp.wq.data, &mut d_h1, n, qw, d, false);
        matmul_a_bt(&dk, &lp.wk.data, &mut d_h1, n, kw, d, true);
        matmul_a_bt(&dv, &lp.wv.data, &mut d_h1, n, kw, d, true);
        rmsnorm_rows_backward(&lc.x_in, &lp.attn_norm.data, &lc.inv1, &d_h1, &mut dx, &mut lg.attn_norm.data, d);
    }

    // embeddings
    for (i, el) in input.elements.iter().enumerate() {
        let row = &dx[i * d..(i + 1) * d];
        match el {
            Element::Token(id) => {
                let id = *id as usize;
                grads.tok_embed.data[id * d..(id + 1) * d].iter_mut().zip(row).for_each(|(a, &b)| *a += b);
            }
            Element::Patch(p) => {
                let x: Vec<T> = p.iter().map(|&v| T::from_f32(v).unwrap()).collect();
                matmul_at_b_acc(&x, row, &mut grads.patch_proj_w.data, 1, cfg.patch_dim, d);
                grads.patch_proj_b.data.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
            }
        }
    }
}
