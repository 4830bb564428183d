//! Fine-tuning loop with periodic dev evaluation and early stopping.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::head::{pooled_repr, FinetuneModel};
use super::metrics::{accuracy, confusion_matrix, f1_binary, mcc, spearman, MetricValue};
use super::task::{EvalReport, Metric, TaskSpec};
use crate::model::{backward_from_hidden, forward, forward_cached, Params, Real, SequenceInput};
use crate::pretrain::optim::{adamw_update, global_norm, AdamW, AdamWConfig, Moments};
use crate::pretrain::schedule::lr_at;
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub weight_decay: f64,
    /// Global-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Train only the task head.
    pub freeze_backbone: bool,
    pub seed: u64,
    pub patch_budget: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            warmup_steps: 0,
            steps: 500,
            batch_size: 16,
            eval_every: 50,
            patience: 10,
            weight_decay: 0.0,
            grad_clip: 1.0,
            freeze_backbone: false,
            seed: 0,
            patch_budget: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Class(Vec<usize>),
    Real(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Class(v) => v.len(),
            Targets::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Model inputs and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub inputs: Vec<SequenceInput>,
    pub targets: Targets,
}

impl TaskData {
    pub fn new(inputs: Vec<SequenceInput>, targets: Targets) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch { left: inputs.len(), right: targets.len() });
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Task-head outputs for every input.
pub fn predict<T: Real>(model: &FinetuneModel<T>, inputs: &[SequenceInput]) -> Result<Vec<Vec<f64>>> {
    inputs
        .par_iter()
        .map(|x| {
            let hidden = forward(x, &model.params, &model.cfg)?;
            let pooled = pooled_repr(&hidden, &x.attention_mask, model.cfg.hidden_size)?;
            Ok(model.head(&pooled).iter().map(|v| v.to_f64c()).collect())
        })
        .collect()
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter().enumerate().fold(0, |best, (i, &v)| if v > xs[best] { i } else { best })
}

pub fn score(metric: Metric, outputs: &[Vec<f64>], targets: &Targets) -> Result<(MetricValue, Option<Vec<Vec<usize>>>)> {
    match targets {
        Targets::Class(labels) => {
            let k = outputs.first().map_or(0, Vec::len);
            let preds: Vec<usize> = outputs.iter().map(|o| argmax(o)).collect();
            let v = match metric {
                Metric::Acc => MetricValue { value: accuracy(&preds, labels)?, degenerate: false },
                Metric::F1 => f1_binary(&preds, labels)?,
                Metric::Mcc => mcc(&preds, labels)?,
                Metric::Spearman => {
                    return Err(Error::InvalidConfig("spearman needs a regression task".into()));
                }
            };
            Ok((v, Some(confusion_matrix(&preds, labels, k))))
        }
        Targets::Real(labels) => {
            if metric != Metric::Spearman {
                return Err(Error::InvalidConfig(format!("{metric} needs a classification task")));
            }
            let preds: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
            Ok((spearman(&preds, labels)?, None))
        }
    }
}

pub fn evaluate_task<T: Real>(model: &FinetuneModel<T>, spec: &TaskSpec, data: &TaskData, step: usize) -> Result<EvalReport> {
    let outputs = predict(model, &data.inputs)?;
    let (v, confusion) = score(spec.metric, &outputs, &data.targets)?;
    Ok(EvalReport {
        task: spec.name.clone(),
        metric: spec.metric,
        value: v.value,
        degenerate: v.degenerate,
        n_samples: data.len(),
        confusion,
        step,
    })
}

struct ExampleGrad<T> {
    loss: f64,
    params: Option<Params<T>>,
    head_w: Vec<T>,
    head_b: Vec<T>,
}

/// Loss of one example (already divided by `batch`) and its gradients.
fn example_grad<T: Real>(
    model: &FinetuneModel<T>,
    input: &SequenceInput,
    targets: &Targets,
    idx: usize,
    batch: usize,
    with_backbone: bool,
) -> Result<ExampleGrad<T>> {
    let (d, k) = (model.cfg.hidden_size, model.n_outputs());
    let cache = forward_cached(input, &model.params, &model.cfg)?;
    let pos = input.attention_mask.iter().rposition(|&m| m).ok_or(Error::EmptySequence)?;
    let pooled = pooled_repr(&cache.hidden, &input.attention_mask, d)?;
    let out: Vec<f64> = model.head(&pooled).iter().map(|v| v.to_f64c()).collect();
    let scale = 1.0 / batch as f64;
    let (loss, dz) = match targets {
        Targets::Class(y) => {
            let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = out.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            let dz: Vec<f64> = out
                .iter()
                .enumerate()
                .map(|(j, v)| ((v - lse).exp() - if j == y[idx] { 1.0 } else { 0.0 }) * scale)
                .collect();
            ((lse - out[y[idx]]) * scale, dz)
        }
        Targets::Real(y) => {
            let e = out[0] - y[idx];
            (e * e * scale, vec![2.0 * e * scale])
        }
    };
    let dz: Vec<T> = dz.into_iter().map(T::from_f64c).collect();
    let mut head_w = vec![T::zero(); d * k];
    let mut d_pooled = vec![T::zero(); d];
    for i in 0..d {
        for j in 0..k {
            head_w[i * k + j] = pooled[i] * dz[j];
            d_pooled[i] += model.head_w.data[i * k + j] * dz[j];
        }
    }
    let params = if with_backbone {
        let mut d_hidden = vec![T::zero(); cache.n * d];
        d_hidden[pos * d..(pos + 1) * d].copy_from_slice(&d_pooled);
        let mut g = model.params.zeros_like();
        backward_from_hidden(input, &model.params, &model.cfg, &cache, &d_hidden, &mut g);
        Some(g)
    } else {
        None
    };
    Ok(ExampleGrad { loss, params, head_w, head_b: dz })
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome<T> {
    /// Parameters from the best dev evaluation.
    pub model: FinetuneModel<T>,
    pub report: EvalReport,
    /// `(step, dev metric)` at every evaluation.
    pub history: Vec<(usize, f64)>,
    pub train_loss: Vec<f64>,
}

/// Full fine-tuning with dev evaluation at step 0, every `eval_every`
/// steps, and at the end; stops after `patience` evaluations without
/// improvement and returns the best model.
pub fn finetune<T: Real>(
    mut model: FinetuneModel<T>,
    spec: &TaskSpec,
    train: &TaskData,
    dev: &TaskData,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome<T>> {
    spec.validate()?;
    if train.is_empty() && cfg.steps > 0 {
        return Err(Error::InvalidConfig("no training examples".into()));
    }
    if cfg.batch_size == 0 || cfg.eval_every == 0 {
        return Err(Error::InvalidConfig("batch_size and eval_every must be positive".into()));
    }
    let opt_cfg = AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::default() };
    let mut opt = AdamW::new(opt_cfg, &model.params);
    let zeros = |n: usize| Moments { m: vec![T::zero(); n], v: vec![T::zero(); n] };
    let (mut mw, mut mb) = (zeros(model.head_w.len()), zeros(model.head_b.len()));
    let mut rng = seed::rng_for(cfg.seed, "finetune-order");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();

    let mut best = evaluate_task(&model, spec, dev, 0)?;
    let mut best_model = model.clone();
    let mut history = vec![(0, best.value)];
    let mut stale = 0;
    let mut train_loss = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(order.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let n = batch.len();
        let grads = batch
            .par_iter()
            .map(|&i| example_grad(&model, &train.inputs[i], &train.targets, i, n, !cfg.freeze_backbone))
            .collect::<Result<Vec<_>>>()?;
        let mut loss = 0.0;
        let mut g_params: Option<Params<T>> = None;
        let mut g_w = vec![T::zero(); model.head_w.len()];
        let mut g_b = vec![T::zero(); model.head_b.len()];
        for g in grads {
            loss += g.loss;
            g_w.iter_mut().zip(&g.head_w).for_each(|(a, &b)| *a += b);
            g_b.iter_mut().zip(&g.head_b).for_each(|(a, &b)| *a += b);
            if let Some(p) = g.params {
                match g_params.as_mut() {
                    Some(acc) => acc.add_assign(&p),
                    None => g_params = Some(p),
                }
            }
        }
        train_loss.push(loss);
        let head_sq: f64 = g_w.iter().chain(&g_b).map(|v| v.to_f64c().powi(2)).sum();
        let norm = (g_params.as_ref().map_or(0.0, |g| global_norm(g).powi(2)) + head_sq).sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFiniteGradient("task_head".into()));
        }
        if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            let s = T::from_f64c(cfg.grad_clip / norm);
            g_w.iter_mut().chain(g_b.iter_mut()).for_each(|v| *v *= s);
            if let Some(g) = g_params.as_mut() {
                for (_, t) in g.tensors_mut() {
                    t.data.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        let lr = lr_at(step, cfg.lr, cfg.warmup_steps, cfg.steps);
        if let Some(g) = &g_params {
            opt.step(&mut model.params, g, lr)?;
        }
        adamw_update(&mut model.head_w.data, &g_w, &mut mw, step as u64, lr, &opt_cfg, true);
        adamw_update(&mut model.head_b.data, &g_b, &mut mb, step as u64, lr, &opt_cfg, false);

        if step % cfg.eval_every == 0 || step == cfg.steps {
            let report = evaluate_task(&model, spec, dev, step)?;
            history.push((step, report.value));
            if report.value > best.value {
                best = report;
                best_model = model.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    Ok(FinetuneOutcome { model: best_model, report: best, history, train_loss })
}
