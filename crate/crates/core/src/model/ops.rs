//! Building blocks of the decoder and their backward passes.

use super::config::ModelConfig;
use super::params::LayerParams;
use super::real::{matmul, silu, silu_grad, Real};
use crate::{Error, Result};

/// `out_i = w_i * x_i / sqrt(mean(x^2) + eps)`
pub fn rmsnorm<T: Real>(x: &[T], weight: &[T], eps: T) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    rmsnorm_into(x, weight, eps, &mut out);
    out
}

/// Writes the normalized row and returns `1 / rms`.
pub fn rmsnorm_into<T: Real>(x: &[T], weight: &[T], eps: T, out: &mut [T]) -> T {
    let d = T::from_usize(x.len()).unwrap();
    let ms = x.iter().map(|&v| v * v).sum::<T>() / d;
    let inv = T::one() / (ms + eps).sqrt();
    for ((o, &v), &w) in out.iter_mut().zip(x).zip(weight) {
        *o = w * v * inv;
    }
    inv
}

/// Row-wise RMSNorm over an `n x d` matrix; returns outputs and `1 / rms`.
pub fn rmsnorm_rows<T: Real>(x: &[T], weight: &[T], eps: T, d: usize) -> (Vec<T>, Vec<T>) {
    let n = x.len() / d;
    let mut out = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(n);
    for (xr, or) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        inv.push(rmsnorm_into(xr, weight, eps, or));
    }
    (out, inv)
}

/// Backward of [`rmsnorm_rows`]: accumulates into `dx` and `dw`.
pub fn rmsnorm_rows_backward<T: Real>(x: &[T], weight: &[T], inv: &[T], dy: &[T], dx: &mut [T], dw: &mut [T], d: usize) {
    let df = T::from_usize(d).unwrap();
    for (r, &s) in inv.iter().enumerate() {
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let dot: T = (0..d).map(|j| dyr[j] * weight[j] * xr[j]).sum();
        let coef = dot * s * s * s / df;
        let dxr = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            dxr[j] += dyr[j] * weight[j] * s - xr[j] * coef;
            dw[j] += dyr[j] * xr[j] * s;
        }
    }
}

/// `W_down (silu(W_gate x) * (W_up x))` for `n` rows of `x`.
/// Weights are `in x out`; returns output plus the gate/up pre-activations.
pub fn swiglu_rows<T: Real>(
    x: &[T],
    w_gate: &[T],
    w_up: &[T],
    w_down: &[T],
    n: usize,
    d: usize,
    inter: usize,
) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
    let mut gate = vec![T::zero(); n * inter];
    let mut up = vec![T::zero(); n * inter];
    matmul(x, w_gate, &mut gate, n, d, inter, false);
    matmul(x, w_up, &mut up, n, d, inter, false);
    let act: Vec<T> = gate.iter().zip(&up).map(|(&g, &u)| silu(g) * u).collect();
    let mut out = vec![T::zero(); n * d];
    matmul(&act, w_down, &mut out, n, inter, d, false);
    (out, gate, up, act)
}

pub fn swiglu_ffn<T: Real>(x: &[T], w_gate: &[T], w_up: &[T], w_down: &[T], inter: usize) -> Vec<T> {
    swiglu_rows(x, w_gate, w_up, w_down, 1, x.len(), inter).0
}

/// `d act / d gate` and `d act / d up` folded with the upstream gradient.
pub fn swiglu_act_backward<T: Real>(gate: &[T], up: &[T], d_act: &[T]) -> (Vec<T>, Vec<T>) {
    let d_gate = gate.iter().zip(up).zip(d_act).map(|((&g, &u), &da)| da * u * silu_grad(g)).collect();
    let d_up = gate.iter().zip(d_act).map(|(&g, &da)| da * silu(g)).collect();
    (d_gate, d_up)
}

/// `theta^(-2i/d)` for each rotated pair.
pub fn rope_frequencies(head_dim: usize, theta: f64) -> Vec<f64> {
    (0..head_dim / 2).map(|i| theta.powf(-2.0 * i as f64 / head_dim as f64)).collect()
}

/// Rotate consecutive pairs `(x[2i], x[2i+1])` by `position * freq[i]`.
/// A negative `sign` applies the inverse rotation.
pub fn rope_rotate<T: Real>(x: &mut [T], position: usize, freqs: &[f64], sign: f64) {
    for (i, &f) in freqs.iter().enumerate() {
        let angle = sign * position as f64 * f;
        let (s, c) = (T::from_f64c(angle.sin()), T::from_f64c(angle.cos()));
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        x[2 * i] = a * c - b * s;
        x[2 * i + 1] = a * s + b * c;
    }
}

pub fn rope_apply<T: Real>(x: &[T], position: usize, theta: f64) -> Result<Vec<T>> {
    if !x.len().is_multiple_of(2) {
        return Err(Error::OddHeadDim(x.len()));
    }
    let mut out = x.to_vec();
    rope_rotate(&mut out, position, &rope_frequencies(x.len(), theta), 1.0);
    Ok(out)
}

/// Rotate every head of an `n x (heads * head_dim)` matrix in place.
pub fn rope_rows<T: Real>(m: &mut [T], positions: &[usize], heads: usize, head_dim: usize, freqs: &[f64], sign: f64) {
    let w = heads * head_dim;
    for (row, &pos) in m.chunks_exact_mut(w).zip(positions) {
        for h in 0..heads {
            rope_rotate(&mut row[h * head_dim..(h + 1) * head_dim], pos, freqs, sign);
        }
    }
}

/// Scaled dot-product attention over already-rotated `q`, `k`, `v`.
///
/// Query head `h` reads key/value head `h / group`. Keys with
/// `key_mask[j] == false` are never attended; with `causal`, query `i`
/// only sees keys `j <= i`. A query with no visible key gets a zero
/// context. Returns the `n x (heads * head_dim)` context and the
/// `heads x n x n` probabilities.
pub fn attend<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    n: usize,
    cfg: &ModelConfig,
    key_mask: &[bool],
    causal: bool,
) -> (Vec<T>, Vec<T>) {
    let (hd, nh, group) = (cfg.head_dim(), cfg.n_heads, cfg.group_size());
    let (qw, kw) = (cfg.q_dim(), cfg.kv_dim());
    let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
    let mut ctx = vec![T::zero(); n * qw];
    let mut probs = vec![T::zero(); nh * n * n];
    let mut scores = vec![T::zero(); n];
    for h in 0..nh {
        let g = h / group;
        for i in 0..n {
            let qi = &q[i * qw + h * hd..i * qw + (h + 1) * hd];
            let limit = if causal { i + 1 } else { n };
            let mut max = T::neg_infinity();
            let mut any = false;
            for j in 0..limit {
                if !key_mask[j] {
                    continue;
                }
                let kj = &k[j * kw + g * hd..j * kw + (g + 1) * hd];
                let s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                scores[j] = s;
                max = max.max(s);
                any = true;
            }
            if !any {
                continue;
            }
            let p = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
            let mut total = T::zero();
            for j in 0..limit {
                if key_mask[j] {
                    p[j] = (scores[j] - max).exp();
                    total += p[j];
                }
            }
            let out = &mut ctx[i * qw + h * hd..i * qw + (h + 1) * hd];
            for j in 0..limit {
                if key_mask[j] {
                    p[j] = p[j] / total;
                    let vj = &v[j * kw + g * hd..j * kw + (g + 1) * hd];
                    for (o, &vv) in out.iter_mut().zip(vj) {
                        *o += p[j] * vv;
                    }
                }
            }
        }
    }
    (ctx, probs)
}

/// Backward of [`attend`]; accumulates into `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub fn attend_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    d_ctx: &[T],
    n: usize,
    cfg: &ModelConfig,
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let (hd, nh, group) = (cfg.head_dim(), cfg.n_heads, cfg.group_size());
    let (qw, kw) = (cfg.q_dim(), cfg.kv_dim());
    let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
    let mut dp = vec![T::zero(); n];
    for h in 0..nh {
        let g = h / group;
        for i in 0..n {
            let p = &probs[(h * n + i) * n..(h * n + i + 1) * n];
            let dci = &d_ctx[i * qw + h * hd..i * qw + (h + 1) * hd];
            let mut weighted = T::zero();
            for j in 0..n {
                if p[j] == T::zero() {
                    dp[j] = T::zero();
                    continue;
                }
                let vj = &v[j * kw + g * hd..j * kw + (g + 1) * hd];
                dp[j] = dci.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                weighted += p[j] * dp[j];
                let dvj = &mut dv[j * kw + g * hd..j * kw + (g + 1) * hd];
                for (o, &c) in dvj.iter_mut().zip(dci) {
                    *o += p[j] * c;
                }
            }
            for j in 0..n {
                if p[j] == T::zero() {
                    continue;
                }
                let ds = p[j] * (dp[j] - weighted) * scale;
                for t in 0..hd {
                    dq[i * qw + h * hd + t] += ds * k[j * kw + g * hd + t];
                    dk[j * kw + g * hd + t] += ds * q[i * qw + h * hd + t];
                }
            }
        }
    }
}

/// Full attention sub-layer (projections, rotary embedding, attention,
/// output projection) on `n` rows of `hidden`. No residual, no norm.
pub fn gqa_attention<T: Real>(
    hidden: &[T],
    n: usize,
    layer: &LayerParams<T>,
    cfg: &ModelConfig,
    key_mask: &[bool],
    causal: bool,
) -> Result<Vec<T>> {
    cfg.validate()?;
    let d = cfg.hidden_size;
    if hidden.len() != n * d || key_mask.len() != n {
        return Err(Error::Shape(format!("attention input is {} values for {n} rows of width {d}", hidden.len())));
    }
    let positions: Vec<usize> = (0..n).collect();
    let (q, k, v) = project_qkv(hidden, n, layer, cfg, &positions);
    let (ctx, _) = attend(&q, &k, &v, n, cfg, key_mask, causal);
    let mut out = vec![T::zero(); n * d];
    matmul(&ctx, &layer.wo.data, &mut out, n, cfg.q_dim(), d, false);
    Ok(out)
}

/// Q/K/V projections with rotary embedding applied to Q and K.
pub fn project_qkv<T: Real>(
    x: &[T],
    n: usize,
    layer: &LayerParams<T>,
    cfg: &ModelConfig,
    positions: &[usize],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (d, qw, kw) = (cfg.hidden_size, cfg.q_dim(), cfg.kv_dim());
    let mut q = vec![T::zero(); n * qw];
    let mut k = vec![T::zero(); n * kw];
    let mut v = vec![T::zero(); n * kw];
    matmul(x, &layer.wq.data, &mut q, n, d, qw, false);
    matmul(x, &layer.wk.data, &mut k, n, d, kw, false);
    matmul(x, &layer.wv.data, &mut v, n, d, kw, false);
    let freqs = rope_frequencies(cfg.head_dim(), cfg.rope_theta);
    rope_rows(&mut q, positions, cfg.n_heads, cfg.head_dim(), &freqs, 1.0);
    rope_rows(&mut k, positions, cfg.n_kv_heads, cfg.head_dim(), &freqs, 1.0);
    (q, k, v)
}
