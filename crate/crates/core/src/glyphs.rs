//! Glyph backends for the renderer.
//!
//! The renderer only needs three things from a font: the cell height, the
//! horizontal advance of each character, and whether a given cell pixel is
//! inked. [`Glyphs`] captures that; [`GlyphSet`] is the built-in bitmap
//! implementation (8x8 public-domain font doubled vertically to 8x16).

use std::collections::HashMap;

use font8x8::legacy::BASIC_LEGACY;

/// A source of monochrome glyph bitmaps.
pub trait Glyphs {
    fn cell_height(&self) -> usize;
    fn advance(&self, ch: char) -> usize;
    /// Whether pixel (`row`, `col`) of `ch`'s cell is inked. `col < advance(ch)`.
    fn ink(&self, ch: char, row: usize, col: usize) -> bool;
}

/// One character cell: `height` rows by `advance` columns, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glyph {
    pub advance: usize,
    pub bitmap: Vec<bool>,
}

impl Glyph {
    pub fn blank(height: usize, advance: usize) -> Self {
        Self { advance, bitmap: vec![false; height * advance] }
    }
}

#[derive(Debug, Clone)]
pub struct GlyphSet {
    height: usize,
    glyphs: HashMap<char, Glyph>,
    replacement: Glyph,
}

pub const BUILTIN_FONT_ID: &str = "builtin-8x16";

impl GlyphSet {
    /// Build a glyph set from explicit bitmaps. Every bitmap must have
    /// `height * advance` entries and `advance >= 1`.
    pub fn new(height: usize, glyphs: HashMap<char, Glyph>, replacement: Glyph) -> Self {
        for (ch, g) in glyphs.iter().chain(std::iter::once((&'\u{fffd}', &replacement))) {
            assert!(g.advance >= 1, "glyph {ch:?} has zero advance");
            assert_eq!(g.bitmap.len(), height * g.advance, "glyph {ch:?} bitmap size");
        }
        Self { height, glyphs, replacement }
    }

    /// The embedded 8x16 font covering printable ASCII (0x20..=0x7e).
    pub fn builtin() -> Self {
        let height = 16;
        let advance = 8;
        let mut glyphs = HashMap::new();
        for code in 0x20u8..=0x7e {
            let rows = BASIC_LEGACY[code as usize];
            let mut g = Glyph::blank(height, advance);
            for (r, bits) in rows.iter().enumerate() {
                for col in 0..8 {
                    if bits & (1 << col) != 0 {
                        // each source row covers two output rows
                        g.bitmap[(2 * r) * advance + col] = true;
                        g.bitmap[(2 * r + 1) * advance + col] = true;
                    }
                }
            }
            glyphs.insert(code as char, g);
        }
        Self::new(height, glyphs, hollow_box(height, advance))
    }

    pub fn glyph(&self, ch: char) -> &Glyph {
        self.glyphs.get(&ch).unwrap_or(&self.replacement)
    }

    pub fn is_mapped(&self, ch: char) -> bool {
        self.glyphs.contains_key(&ch)
    }
}

impl Default for GlyphSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Glyphs for GlyphSet {
    fn cell_height(&self) -> usize {
        self.height
    }

    fn advance(&self, ch: char) -> usize {
        self.glyph(ch).advance
    }

    fn ink(&self, ch: char, row: usize, col: usize) -> bool {
        let g = self.glyph(ch);
        g.bitmap[row * g.advance + col]
    }
}

/// Outline rectangle inset by one column and two rows.
fn hollow_box(height: usize, advance: usize) -> Glyph {
    let mut g = Glyph::blank(height, advance);
    let (top, bottom) = (2, height - 3);
    let (left, right) = (1, advance - 2);
    for r in top..=bottom {
        for c in left..=right {
            if r == top || r == bottom || c == left || c == right {
                g.bitmap[r * advance + c] = true;
            }
        }
    }
    g
}
