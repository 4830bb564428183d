//! Strips <-> flattened patch sequences, masks, target normalization and
//! render-mode conversion.
//!
//! Flattening order inside a patch is rows, then columns, then channels.
//! Pixel bytes are scaled to `[0, 1]` by dividing by 255.

use crate::render::{classify_pixels, PatchRole, RenderedStrip};
use crate::{Error, Result};

/// Default epsilon for per-patch target standardization.
pub const TARGET_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    pub patch_dim: usize,
    /// `len() * patch_dim` values in `[0, 1]`.
    pub patches: Vec<f32>,
    pub attention_mask: Vec<bool>,
    pub loss_mask: Vec<bool>,
    pub roles: Vec<PatchRole>,
}

impl PatchSequence {
    pub fn from_roles(patch_dim: usize, patches: Vec<f32>, roles: Vec<PatchRole>) -> Self {
        assert_eq!(patches.len(), roles.len() * patch_dim);
        let attention_mask = attention_mask_from_roles(&roles);
        let loss_mask = loss_mask_from_roles(&roles);
        Self { patch_dim, patches, attention_mask, loss_mask, roles }
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        &self.patches[i * self.patch_dim..(i + 1) * self.patch_dim]
    }

    /// Keep only the first `n` patches.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self::from_roles(self.patch_dim, self.patches[..n * self.patch_dim].to_vec(), self.roles[..n].to_vec())
    }
}

pub fn attention_mask_from_roles(roles: &[PatchRole]) -> Vec<bool> {
    roles.iter().map(|r| *r == PatchRole::Content).collect()
}

/// Position `i` is trained only when element `i + 1` exists and is content.
pub fn loss_mask_from_roles(roles: &[PatchRole]) -> Vec<bool> {
    (0..roles.len()).map(|i| roles.get(i + 1) == Some(&PatchRole::Content)).collect()
}

/// Cut a strip of height `p` into `width / p` flattened patches.
pub fn patchify(strip: &RenderedStrip, p: usize) -> Result<PatchSequence> {
    if p == 0 || !strip.width.is_multiple_of(p) || strip.height != p {
        return Err(Error::Shape(format!(
            "cannot cut a {}x{} strip into {p}x{p} patches",
            strip.height, strip.width
        )));
    }
    let n = strip.width / p;
    let c = strip.channels;
    let dim = p * p * c;
    let mut patches = Vec::with_capacity(n * dim);
    let mut roles = Vec::with_capacity(n);
    for i in 0..n {
        let start = patches.len();
        for row in 0..p {
            let at = (row * strip.width + i * p) * c;
            patches.extend(strip.pixels[at..at + p * c].iter().map(|&v| v as f32 / 255.0));
        }
        roles.push(classify_patch(&patches[start..]));
    }
    Ok(PatchSequence::from_roles(dim, patches, roles))
}

/// Inverse of [`patchify`]: rebuild the `p x (n*p) x channels` byte canvas.
pub fn depatchify(seq: &PatchSequence, p: usize, channels: usize) -> Result<Vec<u8>> {
    let dim = p * p * channels;
    if seq.patch_dim != dim || seq.patches.len() != seq.len() * dim {
        return Err(Error::Shape(format!(
            "patch dimension {} does not match {p}x{p}x{channels}",
            seq.patch_dim
        )));
    }
    let width = seq.len() * p;
    let mut pixels = vec![0u8; p * width * channels];
    for i in 0..seq.len() {
        let patch = seq.patch(i);
        for row in 0..p {
            let dst = (row * width + i * p) * channels;
            let src = row * p * channels;
            for k in 0..p * channels {
                pixels[dst + k] = (patch[src + k] * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(pixels)
}

pub fn classify_patch(patch: &[f32]) -> PatchRole {
    if patch.iter().all(|&v| v == 0.0) {
        PatchRole::Eos
    } else if patch.iter().all(|&v| v == 1.0) {
        PatchRole::Pad
    } else {
        PatchRole::Content
    }
}

/// Standardize one patch to zero mean and unit variance.
pub fn normalize_patch(patch: &[f32], eps: f64) -> Vec<f32> {
    let n = patch.len() as f64;
    let mean = patch.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = patch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let scale = 1.0 / (var + eps).sqrt();
    patch.iter().map(|&v| ((v as f64 - mean) * scale) as f32).collect()
}

/// Per-patch standardized copy of every patch in the sequence.
pub fn normalize_targets(seq: &PatchSequence, eps: f64) -> Vec<f32> {
    (0..seq.len()).flat_map(|i| normalize_patch(seq.patch(i), eps)).collect()
}

fn single_channel(strip: &RenderedStrip, pixels: Vec<u8>) -> RenderedStrip {
    RenderedStrip { channels: 1, pixels, ..strip.clone() }
}

/// ITU-R 601-2 luma, rounded half up: `(299 R + 587 G + 114 B + 500) / 1000`.
pub fn luma(rgb: &[u8]) -> u8 {
    let sum = 299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32;
    ((sum + 500) / 1000) as u8
}

pub fn to_grayscale(strip: &RenderedStrip) -> Result<RenderedStrip> {
    if strip.channels != 3 {
        return Err(Error::Shape(format!("grayscale conversion needs RGB input, got {} channels", strip.channels)));
    }
    let pixels = strip.pixels.chunks_exact(3).map(luma).collect();
    Ok(single_channel(strip, pixels))
}

/// Grayscale, then pixels below `threshold` become 0 and the rest 255.
pub fn to_binary(strip: &RenderedStrip, threshold: u8) -> Result<RenderedStrip> {
    let gray = match strip.channels {
        1 => strip.clone(),
        _ => to_grayscale(strip)?,
    };
    let pixels = gray.pixels.iter().map(|&v| if v < threshold { 0 } else { 255 }).collect();
    Ok(single_channel(strip, pixels))
}

/// Role of every patch in a strip, recomputed from pixels.
pub fn strip_roles(strip: &RenderedStrip) -> Vec<PatchRole> {
    (0..strip.n_patches()).map(|i| classify_pixels(&strip.patch_bytes(i))).collect()
}
