//! Rasterize text onto fixed-height strips of square patches.
//!
//! A strip is one horizontal run of `max_patches` patches. Text is laid out
//! left to right starting `padding_px` columns into the segment's first
//! patch; a black patch closes every segment (delimiter / EOS) and all
//! remaining patches stay white (padding).

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::glyphs::{Glyphs, BUILTIN_FONT_ID};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub height_px: usize,
    pub max_patches: usize,
    pub patch_px: usize,
    pub channels: usize,
    pub background: [u8; 3],
    pub font_color: [u8; 3],
    /// Informational; only meaningful for scalable font backends.
    pub dpi: u32,
    /// Informational; only meaningful for scalable font backends.
    pub font_size: u32,
    pub padding_px: usize,
    pub font_id: String,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            height_px: 16,
            max_patches: 1024,
            patch_px: 16,
            channels: 3,
            background: [255, 255, 255],
            font_color: [0, 0, 0],
            dpi: 120,
            font_size: 8,
            padding_px: 3,
            font_id: BUILTIN_FONT_ID.to_string(),
        }
    }
}

impl RenderConfig {
    pub fn width_px(&self) -> usize {
        self.max_patches * self.patch_px
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_px * self.patch_px * self.channels
    }

    /// Widest text run that still leaves room for a closing black patch.
    pub fn line_budget_px(&self) -> usize {
        (self.max_patches.saturating_sub(1) * self.patch_px).saturating_sub(self.padding_px)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_px != self.height_px {
            return Err(Error::InvalidConfig(format!(
                "patch_px ({}) must equal height_px ({})",
                self.patch_px, self.height_px
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidConfig(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.max_patches == 0 || self.patch_px == 0 {
            return Err(Error::InvalidConfig("max_patches and patch_px must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PatchRole {
    Content = 0,
    Eos = 1,
    Pad = 2,
}

impl fmt::Display for PatchRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatchRole::Content => "content",
            PatchRole::Eos => "eos",
            PatchRole::Pad => "pad",
        })
    }
}

/// Classify a patch given its raw 8-bit pixels.
pub fn classify_pixels(pixels: &[u8]) -> PatchRole {
    if pixels.iter().all(|&p| p == 0) {
        PatchRole::Eos
    } else if pixels.iter().all(|&p| p == 255) {
        PatchRole::Pad
    } else {
        PatchRole::Content
    }
}

/// An H x W x C canvas, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedStrip {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch_px: usize,
    pub pixels: Vec<u8>,
    /// Patches up to and including the final EOS patch.
    pub used_patches: usize,
    pub patch_roles: Vec<PatchRole>,
}

impl RenderedStrip {
    pub fn n_patches(&self) -> usize {
        self.patch_roles.len()
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let at = (row * self.width + col) * self.channels;
        &self.pixels[at..at + self.channels]
    }

    /// Raw bytes of patch `i`, rows then columns then channels.
    pub fn patch_bytes(&self, i: usize) -> Vec<u8> {
        let p = self.patch_px;
        let mut out = Vec::with_capacity(p * p * self.channels);
        for row in 0..self.height {
            let start = (row * self.width + i * p) * self.channels;
            out.extend_from_slice(&self.pixels[start..start + p * self.channels]);
        }
        out
    }

    pub fn content_patches(&self) -> usize {
        self.patch_roles.iter().filter(|r| **r == PatchRole::Content).count()
    }

    /// Golden-file encoding: `PXSTRIP1`, u32 height, u32 width (LE), then
    /// raw RGB rows. Only three-channel strips are representable.
    pub fn write_golden<W: Write>(&self, mut w: W) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::Shape(format!("golden strips are RGB, got {} channels", self.channels)));
        }
        w.write_all(b"PXSTRIP1")?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    /// Read a golden file back into raw `(height, width, rgb_bytes)`.
    pub fn read_golden<R: Read>(mut r: R) -> Result<(usize, usize, Vec<u8>)> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..8] != b"PXSTRIP1" {
            return Err(Error::Parse("bad golden strip magic".into()));
        }
        let height = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let mut pixels = vec![0u8; height * width * 3];
        r.read_exact(&mut pixels)?;
        Ok((height, width, pixels))
    }
}

/// Sum of glyph advances.
pub fn measure_text<G: Glyphs + ?Sized>(text: &str, glyphs: &G) -> usize {
    text.chars().map(|c| glyphs.advance(c)).sum()
}

fn joined_width<G: Glyphs + ?Sized, S: AsRef<str>>(words: &[S], glyphs: &G) -> usize {
    if words.is_empty() {
        return 0;
    }
    let gaps = (words.len() - 1) * glyphs.advance(' ');
    words.iter().map(|w| measure_text(w.as_ref(), glyphs)).sum::<usize>() + gaps
}

/// Largest `k` such that `words[..k].join(" ")` fits in `budget_px`.
///
/// Width is monotone in `k`, so a binary search over `k` suffices.
pub fn fit_words<G: Glyphs + ?Sized, S: AsRef<str>>(words: &[S], budget_px: usize, glyphs: &G) -> usize {
    let (mut lo, mut hi) = (0usize, words.len());
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if joined_width(&words[..mid], glyphs) <= budget_px {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Whitespace collapses to single spaces; newlines are just another gap.
fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

struct StripBuilder<'a, G: Glyphs + ?Sized> {
    cfg: &'a RenderConfig,
    glyphs: &'a G,
    pixels: Vec<u8>,
    cursor: usize,
}

impl<'a, G: Glyphs + ?Sized> StripBuilder<'a, G> {
    fn new(cfg: &'a RenderConfig, glyphs: &'a G) -> Result<Self> {
        cfg.validate()?;
        if glyphs.cell_height() != cfg.height_px {
            return Err(Error::InvalidConfig(format!(
                "glyph cell height {} does not match strip height {}",
                glyphs.cell_height(),
                cfg.height_px
            )));
        }
        let bg = &cfg.background[..cfg.channels];
        let pixels = bg.iter().copied().cycle().take(cfg.height_px * cfg.width_px() * cfg.channels).collect();
        Ok(Self { cfg, glyphs, pixels, cursor: 0 })
    }

    fn fill_patch(&mut self, patch: usize, color: &[u8]) {
        let (p, c, w) = (self.cfg.patch_px, self.cfg.channels, self.cfg.width_px());
        for row in 0..self.cfg.height_px {
            for col in patch * p..(patch + 1) * p {
                let at = (row * w + col) * c;
                self.pixels[at..at + c].copy_from_slice(&color[..c]);
            }
        }
    }

    /// Lay `text` out from the current patch. `reserve` black patches must
    /// still fit after it.
    fn push_text(&mut self, text: &str, reserve: usize) -> Result<()> {
        let cfg = self.cfg;
        let p = cfg.patch_px;
        let available = cfg.max_patches.saturating_sub(self.cursor + reserve);
        if text.is_empty() {
            if self.cursor + reserve > cfg.max_patches {
                return Err(Error::RenderOverflow { needed: self.cursor + reserve, available: cfg.max_patches });
            }
            return Ok(());
        }
        let width = measure_text(text, self.glyphs);
        let extent = cfg.padding_px + width;
        let needed = extent.div_ceil(p);
        if needed > available {
            return Err(Error::RenderOverflow { needed, available });
        }
        let origin = self.cursor * p + cfg.padding_px;
        let (c, w) = (cfg.channels, cfg.width_px());
        let ink = &cfg.font_color[..c];
        let mut x = origin;
        let mut last_inked_col = None;
        for ch in text.chars() {
            let adv = self.glyphs.advance(ch);
            for row in 0..cfg.height_px {
                for col in 0..adv {
                    if self.glyphs.ink(ch, row, col) {
                        let at = (row * w + x + col) * c;
                        self.pixels[at..at + c].copy_from_slice(ink);
                        last_inked_col = last_inked_col.max(Some(x + col));
                    }
                }
            }
            x += adv;
        }
        // trailing ink-free columns do not earn a patch of their own
        let end_patch = match last_inked_col {
            Some(col) => col / p + 1,
            None => self.cursor,
        };
        self.cursor = end_patch.max(self.cursor);
        Ok(())
    }

    fn push_black(&mut self) -> Result<()> {
        if self.cursor >= self.cfg.max_patches {
            return Err(Error::RenderOverflow { needed: self.cursor + 1, available: self.cfg.max_patches });
        }
        self.fill_patch(self.cursor, &[0, 0, 0]);
        self.cursor += 1;
        Ok(())
    }

    fn finish(self) -> RenderedStrip {
        let cfg = self.cfg;
        let mut strip = RenderedStrip {
            height: cfg.height_px,
            width: cfg.width_px(),
            channels: cfg.channels,
            patch_px: cfg.patch_px,
            pixels: self.pixels,
            used_patches: self.cursor,
            patch_roles: Vec::new(),
        };
        strip.patch_roles = (0..cfg.max_patches).map(|i| classify_pixels(&strip.patch_bytes(i))).collect();
        strip
    }
}

/// Render one text segment followed by an EOS patch.
pub fn render_text<G: Glyphs + ?Sized>(text: &str, cfg: &RenderConfig, glyphs: &G) -> Result<RenderedStrip> {
    let text = normalize_whitespace(text);
    let mut b = StripBuilder::new(cfg, glyphs)?;
    b.push_text(&text, 1)?;
    b.push_black()?;
    Ok(b.finish())
}

/// Render `seg_a`, a black delimiter, `seg_b`, and a closing EOS patch.
pub fn render_pair<G: Glyphs + ?Sized>(
    seg_a: &str,
    seg_b: &str,
    cfg: &RenderConfig,
    glyphs: &G,
) -> Result<RenderedStrip> {
    let (a, b_text) = (normalize_whitespace(seg_a), normalize_whitespace(seg_b));
    let mut b = StripBuilder::new(cfg, glyphs)?;
    b.push_text(&a, 2)?;
    b.push_black()?;
    b.push_text(&b_text, 1)?;
    b.push_black()?;
    Ok(b.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overflow {
    Truncate,
    Segment,
}

/// Split `text` into word-aligned chunks that each fit one strip. Words too
/// wide for an empty strip are broken between characters.
pub fn layout_chunks<G: Glyphs + ?Sized>(text: &str, cfg: &RenderConfig, glyphs: &G) -> Result<Vec<String>> {
    let budget = cfg.line_budget_px();
    let mut words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    words.reverse(); // pop from the back
    let mut chunks = Vec::new();
    let mut pending: Vec<String> = Vec::new();
    while !words.is_empty() {
        pending.clear();
        let rest: Vec<&String> = words.iter().rev().collect();
        let k = fit_words(&rest, budget, glyphs);
        if k > 0 {
            for _ in 0..k {
                pending.push(words.pop().unwrap());
            }
            chunks.push(pending.join(" "));
            continue;
        }
        let word = words.pop().unwrap();
        let mut used = 0;
        let mut split_at = 0;
        for (i, ch) in word.char_indices() {
            let adv = glyphs.advance(ch);
            if used + adv > budget {
                break;
            }
            used += adv;
            split_at = i + ch.len_utf8();
        }
        if split_at == 0 {
            return Err(Error::RenderOverflow { needed: cfg.max_patches + 1, available: cfg.max_patches });
        }
        chunks.push(word[..split_at].to_string());
        words.push(word[split_at..].to_string());
    }
    if chunks.is_empty() {
        chunks.push(String::new());
    }
    Ok(chunks)
}

/// Render text that may not fit one strip, truncating to the first chunk or
/// emitting one strip per chunk.
pub fn truncate_or_segment<G: Glyphs + ?Sized>(
    text: &str,
    cfg: &RenderConfig,
    glyphs: &G,
    mode: Overflow,
) -> Result<Vec<RenderedStrip>> {
    let chunks = layout_chunks(text, cfg, glyphs)?;
    let take = match mode {
        Overflow::Truncate => 1,
        Overflow::Segment => chunks.len(),
    };
    chunks.iter().take(take).map(|c| render_text(c, cfg, glyphs)).collect()
}
