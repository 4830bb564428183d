//! AdamW with bias correction and decoupled weight decay, plus global-norm
//! gradient clipping.

use crate::model::{Params, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// First and second moments for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// One AdamW update of a single tensor. `t` is the 1-based step count.
pub fn adamw_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    state: &mut Moments<T>,
    t: u64,
    lr: f64,
    cfg: &AdamWConfig,
    decay: bool,
) {
    let (b1, b2) = (T::from_f64c(cfg.beta1), T::from_f64c(cfg.beta2));
    let bc1 = T::from_f64c(1.0 - cfg.beta1.powi(t as i32));
    let bc2 = T::from_f64c(1.0 - cfg.beta2.powi(t as i32));
    let lr_t = T::from_f64c(lr);
    let eps = T::from_f64c(cfg.eps);
    let shrink = T::from_f64c(if decay { 1.0 - lr * cfg.weight_decay } else { 1.0 });
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p * shrink - lr_t * m_hat / (v_hat.sqrt() + eps);
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    pub step: u64,
    state: Vec<Moments<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(cfg: AdamWConfig, params: &Params<T>) -> Self {
        let state = params
            .tensors()
            .iter()
            .map(|(_, t)| Moments { m: vec![T::zero(); t.len()], v: vec![T::zero(); t.len()] })
            .collect();
        Self { cfg, step: 0, state }
    }

    /// Decay is applied to matrices only; norm gains and biases are exempt.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>, lr: f64) -> Result<()> {
        for (name, g) in grads.tensors() {
            if g.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name));
            }
        }
        self.step += 1;
        for (((_, p), (_, g)), st) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(self.state.iter_mut()) {
            let decay = p.shape.len() == 2;
            adamw_update(&mut p.data, &g.data, st, self.step, lr, &self.cfg, decay);
        }
        Ok(())
    }
}

pub fn global_norm<T: Real>(grads: &Params<T>) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|v| v.to_f64c().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Rescale so the global norm is at most `max_norm`; returns the norm before
/// clipping.
pub fn clip_global_norm<T: Real>(grads: &mut Params<T>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = T::from_f64c(max_norm / norm);
        for (_, t) in grads.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
