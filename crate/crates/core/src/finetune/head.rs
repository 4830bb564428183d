//! Task heads, pooling, render-mode adaptation, and task inputs.

use rand::Rng;

use super::task::{InputModality, RenderMode, TaskKind, TaskRow, TaskSpec};
use crate::glyphs::Glyphs;
use crate::model::{ModelConfig, Params, Real, SequenceInput, Tensor};
use crate::patchio::{patchify, to_binary, to_grayscale, PatchSequence};
use crate::render::{layout_chunks, render_pair, render_text, PatchRole, RenderConfig, RenderedStrip};
use crate::tokenizer::{TokenSequence, Vocab, EOS_ID};
use crate::{Error, Result};

pub const BINARY_THRESHOLD: u8 = 128;

/// Hidden state at the last attended position: the last content patch for
/// pixel input, the last real token for text and dual input.
pub fn pooled_repr<T: Real>(hidden: &[T], attention_mask: &[bool], d: usize) -> Result<Vec<T>> {
    let i = attention_mask.iter().rposition(|&m| m).ok_or(Error::EmptySequence)?;
    if hidden.len() < (i + 1) * d {
        return Err(Error::Shape(format!("hidden states too short for position {i}")));
    }
    Ok(hidden[i * d..(i + 1) * d].to_vec())
}

/// A pretrained decoder with an affine task head `D -> k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneModel<T> {
    pub cfg: ModelConfig,
    pub params: Params<T>,
    pub head_w: Tensor<T>,
    pub head_b: Tensor<T>,
}

impl<T: Real> FinetuneModel<T> {
    pub fn n_outputs(&self) -> usize {
        self.head_b.len()
    }

    /// Head output for one pooled vector.
    pub fn head(&self, pooled: &[T]) -> Vec<T> {
        let k = self.n_outputs();
        let mut out = self.head_b.data.clone();
        for (j, o) in out.iter_mut().enumerate() {
            for (i, &x) in pooled.iter().enumerate() {
                *o += x * self.head_w.data[i * k + j];
            }
        }
        out
    }
}

pub const HEAD_WEIGHT: &str = "task_head.weight";
pub const HEAD_BIAS: &str = "task_head.bias";

/// Attach a fresh `normal(0, 0.02)` head. The LM heads stay in the
/// parameter set but receive no gradient.
pub fn attach_task_head<T: Real, R: Rng>(
    params: Params<T>,
    cfg: &ModelConfig,
    kind: TaskKind,
    rng: &mut R,
) -> Result<FinetuneModel<T>> {
    params.check_shapes(cfg).map_err(|e| match e {
        Error::ConfigMismatch(m) | Error::Shape(m) => Error::ConfigMismatch(m),
        other => other,
    })?;
    let (d, k) = (cfg.hidden_size, kind.n_outputs());
    Ok(FinetuneModel {
        cfg: cfg.clone(),
        params,
        head_w: Tensor::normal(&[d, k], 0.02, rng),
        head_b: Tensor::zeros(&[k]),
    })
}

fn average_channel_rows<T: Real>(t: &Tensor<T>, out_dim: usize) -> Tensor<T> {
    let rows = t.shape[0] / 3;
    let three = T::from_f64c(3.0);
    let mut data = vec![T::zero(); rows * out_dim];
    for r in 0..rows {
        for j in 0..out_dim {
            let s = (0..3).fold(T::zero(), |acc, c| acc + t.data[(r * 3 + c) * out_dim + j]);
            data[r * out_dim + j] = s / three;
        }
    }
    Tensor { shape: vec![rows, out_dim], data }
}

/// Collapse an RGB patch projection to one channel by averaging the three
/// channel weights of every pixel. The regression head is collapsed the
/// same way so the parameter set stays consistent.
pub fn adapt_patch_embedding_channels<T: Real>(params: &Params<T>, cfg: &ModelConfig) -> Result<(Params<T>, ModelConfig)> {
    if !cfg.patch_dim.is_multiple_of(3) {
        return Err(Error::Shape(format!("patch dimension {} is not an RGB layout", cfg.patch_dim)));
    }
    let d = cfg.hidden_size;
    let mut out = params.clone();
    out.patch_proj_w = average_channel_rows(&params.patch_proj_w, d);
    let pd = cfg.patch_dim;
    let mut reg_t = Tensor { shape: vec![pd, d], data: vec![T::zero(); pd * d] };
    for i in 0..d {
        for j in 0..pd {
            reg_t.data[j * d + i] = params.reg_head_w.data[i * pd + j];
        }
    }
    let reg = average_channel_rows(&reg_t, d);
    let npd = pd / 3;
    out.reg_head_w = Tensor { shape: vec![d, npd], data: vec![T::zero(); d * npd] };
    for i in 0..d {
        for j in 0..npd {
            out.reg_head_w.data[i * npd + j] = reg.data[j * d + i];
        }
    }
    let b = Tensor { shape: vec![pd, 1], data: params.reg_head_b.data.clone() };
    out.reg_head_b = Tensor { shape: vec![npd], data: average_channel_rows(&b, 1).data };
    let new_cfg = ModelConfig { patch_dim: npd, ..cfg.clone() };
    Ok((out, new_cfg))
}

/// Strip patches through the final EOS, right-filled with pad patches to
/// `patch_budget`, followed by `tokens`. Only content patches and real
/// tokens are attended.
pub fn build_dual_input(
    patches: &PatchSequence,
    tokens: &TokenSequence,
    patch_budget: usize,
    max_positions: usize,
) -> Result<SequenceInput> {
    if patches.len() > patch_budget {
        return Err(Error::Length { len: patches.len(), max: patch_budget });
    }
    let len = patch_budget + tokens.len();
    if len > max_positions {
        return Err(Error::Length { len, max: max_positions });
    }
    let dim = patches.patch_dim;
    let mut data = patches.patches.clone();
    data.resize(patch_budget * dim, 1.0);
    let mut roles = patches.roles.clone();
    roles.resize(patch_budget, PatchRole::Pad);
    let padded = PatchSequence::from_roles(dim, data, roles);
    Ok(SequenceInput::from_patches(&padded).concat(SequenceInput::from_tokens(&tokens.ids, &tokens.attention_mask)))
}

/// Converts task rows into model inputs for one modality and render mode.
pub struct InputBuilder<'a, G: Glyphs + ?Sized> {
    pub render: RenderConfig,
    pub glyphs: &'a G,
    pub vocab: &'a Vocab,
    pub modality: InputModality,
    pub render_mode: RenderMode,
    pub patch_budget: usize,
    pub max_positions: usize,
}

impl<'a, G: Glyphs + ?Sized> InputBuilder<'a, G> {
    pub fn for_task(spec: &TaskSpec, glyphs: &'a G, vocab: &'a Vocab, patch_budget: usize, max_positions: usize) -> Self {
        let render = RenderConfig { max_patches: patch_budget, ..RenderConfig::default() };
        Self {
            render,
            glyphs,
            vocab,
            modality: spec.modality,
            render_mode: spec.render_mode,
            patch_budget,
            max_positions,
        }
    }

    fn first_chunk(&self, text: &str, max_patches: usize) -> Result<String> {
        let cfg = RenderConfig { max_patches, ..self.render.clone() };
        Ok(layout_chunks(text, &cfg, self.glyphs)?.swap_remove(0))
    }

    /// Render a row, truncating text that does not fit the patch budget.
    pub fn strip(&self, row: &TaskRow) -> Result<RenderedStrip> {
        let strip = match &row.text_b {
            None => render_text(&self.first_chunk(&row.text_a, self.patch_budget)?, &self.render, self.glyphs)?,
            Some(b) => match render_pair(&row.text_a, b, &self.render, self.glyphs) {
                Err(Error::RenderOverflow { .. }) => {
                    let half = (self.patch_budget / 2).max(2);
                    let (a, b) = (self.first_chunk(&row.text_a, half)?, self.first_chunk(b, half)?);
                    render_pair(&a, &b, &self.render, self.glyphs)?
                }
                other => other?,
            },
        };
        match self.render_mode {
            RenderMode::Rgb => Ok(strip),
            RenderMode::Grayscale => to_grayscale(&strip),
            RenderMode::Binary => to_binary(&strip, BINARY_THRESHOLD),
        }
    }

    pub fn patches(&self, row: &TaskRow) -> Result<PatchSequence> {
        let strip = self.strip(row)?;
        Ok(patchify(&strip, strip.patch_px)?.truncated(strip.used_patches))
    }

    /// `text_a [EOS text_b] EOS`, cut to `limit` ids.
    pub fn tokens(&self, row: &TaskRow, limit: usize) -> TokenSequence {
        let mut ids = self.vocab.encode(&row.text_a).ids;
        if let Some(b) = &row.text_b {
            ids.push(EOS_ID);
            ids.extend(self.vocab.encode(b).ids);
        }
        ids.push(EOS_ID);
        ids.truncate(limit);
        TokenSequence::new(ids)
    }

    pub fn build(&self, row: &TaskRow) -> Result<SequenceInput> {
        match self.modality {
            InputModality::Text => {
                let t = self.tokens(row, self.max_positions);
                Ok(SequenceInput::from_tokens(&t.ids, &t.attention_mask))
            }
            InputModality::Pixel => build_dual_input(&self.patches(row)?, &TokenSequence::new(vec![]), self.patch_budget, self.max_positions),
            InputModality::Dual => {
                let t = self.tokens(row, self.max_positions.saturating_sub(self.patch_budget));
                build_dual_input(&self.patches(row)?, &t, self.patch_budget, self.max_positions)
            }
        }
    }
}
