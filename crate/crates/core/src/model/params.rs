use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::real::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn normal<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("valid std");
        Self { shape: shape.to_vec(), data: (0..shape.iter().product()).map(|_| T::from_f64c(dist.sample(rng))).collect() }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::from_f64c(v.to_f64c())).collect() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Weights of one decoder block. Projection matrices are stored
/// `in x out` so that `y = x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub attn_norm: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub ffn_norm: Tensor<T>,
    pub w_gate: Tensor<T>,
    pub w_up: Tensor<T>,
    pub w_down: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub tok_embed: Tensor<T>,
    pub patch_proj_w: Tensor<T>,
    pub patch_proj_b: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: Tensor<T>,
    pub reg_head_w: Tensor<T>,
    pub reg_head_b: Tensor<T>,
    pub cls_head_w: Tensor<T>,
    pub cls_head_b: Tensor<T>,
}

impl<T: Real> LayerParams<T> {
    fn build(cfg: &ModelConfig, mut mat: impl FnMut(&[usize]) -> Tensor<T>, norm: impl Fn(&[usize]) -> Tensor<T>) -> Self {
        let (d, i) = (cfg.hidden_size, cfg.intermediate_size);
        Self {
            attn_norm: norm(&[d]),
            wq: mat(&[d, cfg.q_dim()]),
            wk: mat(&[d, cfg.kv_dim()]),
            wv: mat(&[d, cfg.kv_dim()]),
            wo: mat(&[cfg.q_dim(), d]),
            ffn_norm: norm(&[d]),
            w_gate: mat(&[d, i]),
            w_up: mat(&[d, i]),
            w_down: mat(&[i, d]),
        }
    }
}

impl<T: Real> Params<T> {
    fn build(
        cfg: &ModelConfig,
        mut mat: impl FnMut(&[usize]) -> Tensor<T>,
        norm: impl Fn(&[usize]) -> Tensor<T>,
    ) -> Self {
        let (d, v, pd) = (cfg.hidden_size, cfg.vocab_size, cfg.patch_dim);
        let tok_embed = mat(&[v, d]);
        let patch_proj_w = mat(&[pd, d]);
        let layers = (0..cfg.n_layers).map(|_| LayerParams::build(cfg, &mut mat, &norm)).collect();
        Self {
            tok_embed,
            patch_proj_w,
            patch_proj_b: Tensor::zeros(&[d]),
            layers,
            final_norm: norm(&[d]),
            reg_head_w: mat(&[d, pd]),
            reg_head_b: Tensor::zeros(&[pd]),
            cls_head_w: mat(&[d, v]),
            cls_head_b: Tensor::zeros(&[v]),
        }
    }

    /// Normal(0, initializer_range) weights, zero biases, unit norm gains.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let std = cfg.initializer_range;
        Self::build(cfg, |s| Tensor::normal(s, std, rng), |s| Tensor::filled(s, T::one()))
    }

    /// All-zero tensors with this model's shapes (gradient accumulators).
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self::build(cfg, Tensor::zeros, Tensor::zeros)
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = T::zero());
        }
        out
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("tok_embed".to_string(), &self.tok_embed),
            ("patch_proj.weight".to_string(), &self.patch_proj_w),
            ("patch_proj.bias".to_string(), &self.patch_proj_b),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in [
                ("attn_norm", &l.attn_norm),
                ("wq", &l.wq),
                ("wk", &l.wk),
                ("wv", &l.wv),
                ("wo", &l.wo),
                ("ffn_norm", &l.ffn_norm),
                ("w_gate", &l.w_gate),
                ("w_up", &l.w_up),
                ("w_down", &l.w_down),
            ] {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.extend([
            ("final_norm".to_string(), &self.final_norm),
            ("regression_head.weight".to_string(), &self.reg_head_w),
            ("regression_head.bias".to_string(), &self.reg_head_b),
            ("classification_head.weight".to_string(), &self.cls_head_w),
            ("classification_head.bias".to_string(), &self.cls_head_b),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            ("tok_embed".to_string(), &mut self.tok_embed),
            ("patch_proj.weight".to_string(), &mut self.patch_proj_w),
            ("patch_proj.bias".to_string(), &mut self.patch_proj_b),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (name, t) in [
                ("attn_norm", &mut l.attn_norm),
                ("wq", &mut l.wq),
                ("wk", &mut l.wk),
                ("wv", &mut l.wv),
                ("wo", &mut l.wo),
                ("ffn_norm", &mut l.ffn_norm),
                ("w_gate", &mut l.w_gate),
                ("w_up", &mut l.w_up),
                ("w_down", &mut l.w_down),
            ] {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.extend([
            ("final_norm".to_string(), &mut self.final_norm),
            ("regression_head.weight".to_string(), &mut self.reg_head_w),
            ("regression_head.bias".to_string(), &mut self.reg_head_b),
            ("classification_head.weight".to_string(), &mut self.cls_head_w),
            ("classification_head.bias".to_string(), &mut self.cls_head_b),
        ]);
        out
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        let mut out = Params::<U> {
            tok_embed: self.tok_embed.cast(),
            patch_proj_w: self.patch_proj_w.cast(),
            patch_proj_b: self.patch_proj_b.cast(),
            layers: Vec::new(),
            final_norm: self.final_norm.cast(),
            reg_head_w: self.reg_head_w.cast(),
            reg_head_b: self.reg_head_b.cast(),
            cls_head_w: self.cls_head_w.cast(),
            cls_head_b: self.cls_head_b.cast(),
        };
        out.layers = self
            .layers
            .iter()
            .map(|l| LayerParams {
                attn_norm: l.attn_norm.cast(),
                wq: l.wq.cast(),
                wk: l.wk.cast(),
                wv: l.wv.cast(),
                wo: l.wo.cast(),
                ffn_norm: l.ffn_norm.cast(),
                w_gate: l.w_gate.cast(),
                w_up: l.w_up.cast(),
                w_down: l.w_down.cast(),
            })
            .collect();
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += *y);
        }
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expect = Self::zeros(cfg);
        if self.layers.len() != expect.layers.len() {
            return Err(Error::ConfigMismatch(format!(
                "parameters have {} layers, config says {}",
                self.layers.len(),
                expect.layers.len()
            )));
        }
        for ((name, a), (_, b)) in self.tensors().into_iter().zip(expect.tensors()) {
            if a.shape != b.shape {
                return Err(Error::ConfigMismatch(format!("tensor {name} has shape {:?}, expected {:?}", a.shape, b.shape)));
            }
        }
        Ok(())
    }
}
