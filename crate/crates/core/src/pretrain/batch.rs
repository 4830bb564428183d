//! Training examples, shard records, and target alignment.
//!
//! Position `i` is trained on element `i + 1`: the regression head when
//! that element is a patch, the classification head when it is a token.
//! Positions whose next element is an EOS/pad patch or a pad token, and the
//! final position, carry no loss.

use crate::model::{Element, SequenceInput};
use crate::patchio::{loss_mask_from_roles, normalize_patch, patchify, PatchSequence};
use crate::render::{PatchRole, RenderedStrip};
use crate::shard::{Modality, ShardRecord};
use crate::tokenizer::TokenSequence;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub input: SequenceInput,
    /// `len * patch_dim`; row `i` is the standardized patch `i + 1` where
    /// `patch_loss_mask[i]`, zeros elsewhere.
    pub patch_targets: Vec<f32>,
    pub patch_loss_mask: Vec<bool>,
    /// Row `i` is token `i + 1` where `token_loss_mask[i]`, 0 elsewhere.
    pub token_targets: Vec<u32>,
    pub token_loss_mask: Vec<bool>,
}

impl TrainExample {
    /// Derive aligned targets from an input and a combined loss mask.
    pub fn from_input(input: SequenceInput, loss_mask: &[bool], patch_dim: usize, eps: f64) -> Result<Self> {
        let n = input.len();
        if loss_mask.len() != n {
            return Err(Error::Shape(format!("loss mask has {} entries for {n} positions", loss_mask.len())));
        }
        let mut patch_targets = vec![0.0f32; n * patch_dim];
        let mut patch_loss_mask = vec![false; n];
        let mut token_targets = vec![0u32; n];
        let mut token_loss_mask = vec![false; n];
        for i in 0..n.saturating_sub(1) {
            if !loss_mask[i] {
                continue;
            }
            match &input.elements[i + 1] {
                Element::Patch(p) => {
                    if p.len() != patch_dim {
                        return Err(Error::Shape(format!("patch of dimension {} (expected {patch_dim})", p.len())));
                    }
                    patch_targets[i * patch_dim..(i + 1) * patch_dim].copy_from_slice(&normalize_patch(p, eps));
                    patch_loss_mask[i] = true;
                }
                Element::Token(t) => {
                    token_targets[i] = *t;
                    token_loss_mask[i] = true;
                }
            }
        }
        Ok(Self { input, patch_targets, patch_loss_mask, token_targets, token_loss_mask })
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    pub fn has_patch_targets(&self) -> bool {
        self.patch_loss_mask.iter().any(|&m| m)
    }

    pub fn has_token_targets(&self) -> bool {
        self.token_loss_mask.iter().any(|&m| m)
    }
}

/// A batch where every example has the same kind.
#[derive(Debug, Clone)]
pub struct MixedBatch<'a> {
    pub kind: Modality,
    pub examples: Vec<&'a TrainExample>,
}

/// Content flags of a patches-then-tokens sequence.
fn content_flags(roles: &[PatchRole], token_mask: &[bool]) -> Vec<PatchRole> {
    roles
        .iter()
        .copied()
        .chain(token_mask.iter().map(|&m| if m { PatchRole::Content } else { PatchRole::Pad }))
        .collect()
}

/// Loss mask of a patches-then-tokens sequence.
pub fn sequence_loss_mask(roles: &[PatchRole], token_mask: &[bool]) -> Vec<bool> {
    loss_mask_from_roles(&content_flags(roles, token_mask))
}

/// Patch positions first, then token positions.
pub fn build_pair_sequence(
    patches: &PatchSequence,
    tokens: &TokenSequence,
    max_positions: usize,
    eps: f64,
) -> Result<TrainExample> {
    let len = patches.len() + tokens.len();
    if len > max_positions {
        return Err(Error::Length { len, max: max_positions });
    }
    let input = SequenceInput::from_patches(patches).concat(SequenceInput::from_tokens(&tokens.ids, &tokens.attention_mask));
    let loss_mask = sequence_loss_mask(&patches.roles, &tokens.attention_mask);
    TrainExample::from_input(input, &loss_mask, patches.patch_dim, eps)
}

/// Patches of a strip up to and including its final EOS patch.
pub fn used_patches(strip: &RenderedStrip) -> Result<PatchSequence> {
    Ok(patchify(strip, strip.patch_px)?.truncated(strip.used_patches))
}

fn record(modality: Modality, patches: Option<&RenderedStrip>, tokens: Option<&TokenSequence>) -> Result<ShardRecord> {
    let (bytes, roles) = match patches {
        Some(s) => {
            let n = s.used_patches;
            ((0..n).flat_map(|i| s.patch_bytes(i)).collect(), s.patch_roles[..n].to_vec())
        }
        None => (Vec::new(), Vec::new()),
    };
    let (ids, tmask) = match tokens {
        Some(t) => (t.ids.clone(), t.attention_mask.clone()),
        None => (Vec::new(), Vec::new()),
    };
    let flags = content_flags(&roles, &tmask);
    Ok(ShardRecord {
        modality,
        n_patches: roles.len(),
        patches: bytes,
        tokens: ids,
        attention_mask: flags.iter().map(|r| *r == PatchRole::Content).collect(),
        loss_mask: loss_mask_from_roles(&flags),
    })
}

pub fn pixel_record(strip: &RenderedStrip) -> Result<ShardRecord> {
    record(Modality::Pixel, Some(strip), None)
}

pub fn text_record(tokens: &TokenSequence) -> Result<ShardRecord> {
    record(Modality::Text, None, Some(tokens))
}

pub fn pair_record(strip: &RenderedStrip, tokens: &TokenSequence) -> Result<ShardRecord> {
    record(Modality::Pair, Some(strip), Some(tokens))
}

pub fn example_from_record(rec: &ShardRecord, patch_dim: usize, eps: f64) -> Result<TrainExample> {
    if rec.patches.len() != rec.n_patches * patch_dim {
        return Err(Error::Shape("record payload does not match patch geometry".into()));
    }
    let mut elements: Vec<Element> = rec
        .patches
        .chunks_exact(patch_dim.max(1))
        .take(rec.n_patches)
        .map(|c| Element::Patch(c.iter().map(|&b| b as f32 / 255.0).collect()))
        .collect();
    elements.extend(rec.tokens.iter().map(|&t| Element::Token(t)));
    let input = SequenceInput { elements, attention_mask: rec.attention_mask.clone() };
    TrainExample::from_input(input, &rec.loss_mask, patch_dim, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchio::TARGET_EPS;

    fn patches(roles: &[PatchRole]) -> PatchSequence {
        let dim = 4;
        let data = roles
            .iter()
            .enumerate()
            .flat_map(|(i, r)| match r {
                PatchRole::Eos => vec![0.0; dim],
                PatchRole::Pad => vec![1.0; dim],
                PatchRole::Content => vec![0.0, 1.0, 0.5, i as f32 / 10.0],
            })
            .collect();
        PatchSequence::from_roles(dim, data, roles.to_vec())
    }

    #[test]
    fn pair_alignment_routes_heads() {
        use PatchRole::*;
        let p = patches(&[Content, Content, Eos]);
        let t = TokenSequence::new(vec![5, 6, 7]);
        let ex = build_pair_sequence(&p, &t, 16, TARGET_EPS).unwrap();
        assert_eq!(ex.patch_loss_mask, vec![true, false, false, false, false, false]);
        assert_eq!(ex.token_loss_mask, vec![false, false, true, true, true, false]);
        assert_eq!(&ex.token_targets[2..5], &[5, 6, 7]);
        assert_eq!(&ex.patch_targets[..4], normalize_patch(p.patch(1), TARGET_EPS).as_slice());
    }

    #[test]
    fn degenerate_pairs() {
        use PatchRole::*;
        let t = TokenSequence::new(vec![1, 2, 3]);
        let ex = build_pair_sequence(&patches(&[]), &t, 16, TARGET_EPS).unwrap();
        assert_eq!(ex.token_loss_mask, vec![true, true, false]);
        assert!(!ex.has_patch_targets());
        let ex = build_pair_sequence(&patches(&[Content, Content, Eos]), &TokenSequence::new(vec![]), 16, TARGET_EPS)
            .unwrap();
        assert_eq!(ex.patch_loss_mask, vec![true, false, false]);
        assert!(!ex.has_token_targets());
        let long = build_pair_sequence(&patches(&[Content; 10]), &t, 12, TARGET_EPS);
        assert!(matches!(long, Err(Error::Length { len: 13, max: 12 })));
    }

    #[test]
    fn records_reproduce_examples() {
        use crate::glyphs::GlyphSet;
        use crate::patchio::TARGET_EPS;
        use crate::render::{render_text, RenderConfig};
        let cfg = RenderConfig { max_patches: 8, ..RenderConfig::default() };
        let strip = render_text("hi there", &cfg, &GlyphSet::builtin()).unwrap();
        let toks = TokenSequence::new(vec![104, 105, 32]);
        let rec = pair_record(&strip, &toks).unwrap();
        let from_rec = example_from_record(&rec, 768, TARGET_EPS).unwrap();
        let direct = build_pair_sequence(&used_patches(&strip).unwrap(), &toks, 64, TARGET_EPS).unwrap();
        assert_eq!(from_rec, direct);
    }
}
