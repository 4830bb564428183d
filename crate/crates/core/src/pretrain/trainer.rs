//! The pre-training loop.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::{example_from_record, TrainExample};
use super::losses::{patch_loss_grad, patch_loss_sum, token_loss_grad, token_loss_sum, LossValue};
use super::optim::{clip_global_norm, AdamW, AdamWConfig};
use super::schedule::{lr_at, mix_schedule};
use crate::model::{backward, classification_head, forward_cached, regression_head, ModelConfig, Params, Real};
use crate::seed;
use crate::shard::{Modality, ShardRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    /// Only `"linear"` is supported.
    pub schedule: String,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Batches of text : pixel : pair.
    pub mix_ratio: [u32; 3],
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    /// Global-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Save a checkpoint every this many steps; 0 saves only the final one.
    pub checkpoint_every: usize,
    pub target_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 5e-4,
            warmup_steps: 200,
            schedule: "linear".into(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            mix_ratio: [4, 4, 2],
            seed: 0,
            steps: 2000,
            batch_size: 8,
            grad_clip: 1.0,
            checkpoint_every: 0,
            target_eps: crate::patchio::TARGET_EPS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schedule != "linear" {
            return Err(Error::InvalidConfig(format!("unknown schedule `{}`", self.schedule)));
        }
        if self.steps > 0 && self.warmup_steps > self.steps {
            return Err(Error::InvalidConfig(format!(
                "warmup_steps {} exceeds steps {}",
                self.warmup_steps, self.steps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        lr_at(step, self.peak_lr, self.warmup_steps, self.steps)
    }
}

/// The four pre-training configurations, by which data kinds they see.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    TextGpt,
    PixelGpt,
    MonoGpt,
    DualGpt,
}

impl Preset {
    pub fn kinds(self) -> BTreeSet<Modality> {
        match self {
            Preset::TextGpt => [Modality::Text].into(),
            Preset::PixelGpt => [Modality::Pixel].into(),
            Preset::MonoGpt => [Modality::Text, Modality::Pixel].into(),
            Preset::DualGpt => [Modality::Text, Modality::Pixel, Modality::Pair].into(),
        }
    }

    pub fn default_ratio(self) -> [u32; 3] {
        match self {
            Preset::TextGpt => [1, 0, 0],
            Preset::PixelGpt => [0, 1, 0],
            Preset::MonoGpt => [1, 1, 0],
            Preset::DualGpt => [4, 4, 2],
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "textgpt" => Some(Preset::TextGpt),
            "pixel" | "pixelgpt" => Some(Preset::PixelGpt),
            "mono" | "monogpt" => Some(Preset::MonoGpt),
            "dual" | "dualgpt" => Some(Preset::DualGpt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub text: Vec<TrainExample>,
    pub pixel: Vec<TrainExample>,
    pub pair: Vec<TrainExample>,
}

impl Corpus {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ShardRecord>, patch_dim: usize, eps: f64) -> Result<Self> {
        let mut c = Self::default();
        for rec in records {
            let ex = example_from_record(rec, patch_dim, eps)?;
            c.get_mut(rec.modality).push(ex);
        }
        Ok(c)
    }

    pub fn get(&self, kind: Modality) -> &[TrainExample] {
        match kind {
            Modality::Text => &self.text,
            Modality::Pixel => &self.pixel,
            Modality::Pair => &self.pair,
        }
    }

    pub fn get_mut(&mut self, kind: Modality) -> &mut Vec<TrainExample> {
        match kind {
            Modality::Text => &mut self.text,
            Modality::Pixel => &mut self.pixel,
            Modality::Pair => &mut self.pair,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &TrainExample> {
        self.text.iter().chain(&self.pixel).chain(&self.pair)
    }
}

/// Batch-level means of both objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub patch: LossValue,
    pub token: LossValue,
}

impl BatchLoss {
    /// The optimized objective: sum of whichever means are present.
    pub fn total(&self) -> f64 {
        self.patch.loss + self.token.loss
    }
}

struct SeqOut<T> {
    patch: (f64, usize),
    token: (f64, usize),
    grads: Option<Params<T>>,
}

fn run_sequence<T: Real>(
    params: &Params<T>,
    cfg: &ModelConfig,
    ex: &TrainExample,
    norms: Option<(usize, usize)>,
) -> Result<SeqOut<T>> {
    let cache = forward_cached(&ex.input, params, cfg)?;
    let mut out = SeqOut { patch: (0.0, 0), token: (0.0, 0), grads: None };
    let mut d_reg = None;
    let mut d_logits = None;
    if ex.has_patch_targets() {
        let pred = regression_head(&cache.hidden, params, cfg)?;
        out.patch = patch_loss_sum(&pred, &ex.patch_targets, &ex.patch_loss_mask, cfg.patch_dim)?;
        if let Some((pn, _)) = norms {
            d_reg = Some(patch_loss_grad(&pred, &ex.patch_targets, &ex.patch_loss_mask, cfg.patch_dim, pn));
        }
    }
    if ex.has_token_targets() {
        let logits = classification_head(&cache.hidden, params, cfg)?;
        out.token = token_loss_sum(&logits, &ex.token_targets, &ex.token_loss_mask, cfg.vocab_size)?;
        if let Some((_, tn)) = norms {
            d_logits = Some(token_loss_grad(&logits, &ex.token_targets, &ex.token_loss_mask, cfg.vocab_size, tn));
        }
    }
    if norms.is_some() {
        let mut g = params.zeros_like();
        backward(&ex.input, params, cfg, &cache, d_reg.as_deref(), d_logits.as_deref(), &mut g);
        out.grads = Some(g);
    }
    Ok(out)
}

fn combine<T: Real>(outs: Vec<SeqOut<T>>) -> (BatchLoss, Option<Params<T>>) {
    let (mut ps, mut pc, mut ts, mut tc) = (0.0, 0, 0.0, 0);
    let mut grads: Option<Params<T>> = None;
    for o in outs {
        ps += o.patch.0;
        pc += o.patch.1;
        ts += o.token.0;
        tc += o.token.1;
        if let Some(g) = o.grads {
            match grads.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => grads = Some(g),
            }
        }
    }
    (BatchLoss { patch: LossValue::from_sum(ps, pc), token: LossValue::from_sum(ts, tc) }, grads)
}

/// Loss of a batch and the gradient of [`BatchLoss::total`]. Examples run in
/// parallel but are reduced in order, so results do not depend on the
/// thread count.
pub fn batch_loss_and_grads<T: Real>(
    params: &Params<T>,
    cfg: &ModelConfig,
    examples: &[&TrainExample],
) -> Result<(BatchLoss, Params<T>)> {
    let pn = examples.iter().map(|e| e.patch_loss_mask.iter().filter(|&&m| m).count()).sum();
    let tn = examples.iter().map(|e| e.token_loss_mask.iter().filter(|&&m| m).count()).sum();
    let outs = examples
        .par_iter()
        .map(|ex| run_sequence(params, cfg, ex, Some((pn, tn))))
        .collect::<Result<Vec<_>>>()?;
    let (loss, grads) = combine(outs);
    Ok((loss, grads.unwrap_or_else(|| params.zeros_like())))
}

/// Forward-only loss over a set of examples.
pub fn evaluate<T: Real>(params: &Params<T>, cfg: &ModelConfig, examples: &[&TrainExample]) -> Result<BatchLoss> {
    let outs = examples.par_iter().map(|ex| run_sequence(params, cfg, ex, None)).collect::<Result<Vec<_>>>()?;
    Ok(combine(outs).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub kind: Modality,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub patch_loss: Option<f64>,
    pub token_loss: Option<f64>,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        write!(
            f,
            "{}\t{}\t{:.6}\t{}\t{}\t{:.6e}\t{:.6}",
            self.step,
            self.kind.name(),
            self.loss,
            opt(self.patch_loss),
            opt(self.token_loss),
            self.lr,
            self.grad_norm
        )
    }
}

pub fn write_metrics_log<W: Write>(mut w: W, log: &[StepRecord]) -> Result<()> {
    writeln!(w, "step\tkind\tloss\tpatch_loss\ttoken_loss\tlr\tgrad_norm")?;
    for r in log {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

/// Epoch-shuffled cycling over one kind's examples.
struct Sampler {
    order: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    fn new(n: usize) -> Self {
        Self { order: (0..n).collect(), cursor: n }
    }

    fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

pub struct TrainOutcome {
    pub params: Params<f32>,
    pub log: Vec<StepRecord>,
}

/// Train `params` on the enabled kinds. `on_checkpoint(step, params)` runs
/// before the first step, every `checkpoint_every` steps, and after the
/// last step.
pub fn train(
    mut params: Params<f32>,
    cfg: &ModelConfig,
    corpus: &Corpus,
    tcfg: &TrainConfig,
    kinds: &BTreeSet<Modality>,
    mut on_checkpoint: impl FnMut(usize, &Params<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    cfg.validate()?;
    params.check_shapes(cfg)?;
    let mut ratio = tcfg.mix_ratio;
    for (k, r) in [Modality::Text, Modality::Pixel, Modality::Pair].iter().zip(ratio.iter_mut()) {
        if !kinds.contains(k) {
            *r = 0;
        }
    }
    for &k in kinds {
        if corpus.get(k).is_empty() {
            return Err(Error::MissingModality(k.name().into()));
        }
    }
    let schedule = mix_schedule(ratio, tcfg.steps, tcfg.seed)?;
    let mut rng = seed::rng_for(tcfg.seed, seed::SCHEDULE);
    let mut samplers = [Sampler::new(corpus.text.len()), Sampler::new(corpus.pixel.len()), Sampler::new(corpus.pair.len())];
    let mut opt = AdamW::new(tcfg.adamw(), &params);
    let mut log = Vec::with_capacity(tcfg.steps);

    on_checkpoint(0, &params)?;
    for (i, &kind) in schedule.iter().enumerate() {
        let step = i + 1;
        let pool = corpus.get(kind);
        let picks = samplers[kind as usize].next_batch(tcfg.batch_size, &mut rng);
        let batch: Vec<&TrainExample> = picks.iter().map(|&j| &pool[j]).collect();
        let (loss, mut grads) = batch_loss_and_grads(&params, cfg, &batch)?;
        let grad_norm = if tcfg.grad_clip > 0.0 {
            clip_global_norm(&mut grads, tcfg.grad_clip)
        } else {
            super::optim::global_norm(&grads)
        };
        let lr = tcfg.lr_at(step);
        opt.step(&mut params, &grads, lr)?;
        log.push(StepRecord {
            step,
            kind,
            loss: loss.total(),
            lr,
            grad_norm,
            patch_loss: (!loss.patch.is_empty()).then_some(loss.patch.loss),
            token_loss: (!loss.token.is_empty()).then_some(loss.token.loss),
        });
        if tcfg.checkpoint_every > 0 && step % tcfg.checkpoint_every == 0 && step != tcfg.steps {
            on_checkpoint(step, &params)?;
        }
    }
    if tcfg.steps > 0 {
        on_checkpoint(tcfg.steps, &params)?;
    }
    Ok(TrainOutcome { params, log })
}
