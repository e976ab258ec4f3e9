//! Procedural rendering: border lines and text as runs of dark pixels.

use crate::featurize::fnv1a;
use crate::table::{BBox, CellType, GrayImage};

use super::BorderStyle;

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;
/// Pixel value of rendered text.
pub const INK: u8 = 20;
/// Pixel value of border lines.
pub const RULE: u8 = 40;

/// 5x7 bitmap of a character, row-major in the low 35 bits. Never blank for
/// a non-whitespace character.
pub fn glyph(ch: char) -> u64 {
    if ch.is_whitespace() {
        return 0;
    }
    let mut buf = [0u8; 4];
    let bits = fnv1a(ch.encode_utf8(&mut buf).as_bytes()) & ((1 << 35) - 1);
    if bits.count_ones() < 8 {
        // a vertical stroke keeps sparse hashes legible as ink
        bits | (0..GLYPH_H).fold(0, |m, r| m | 1 << (r * GLYPH_W + 2))
    } else {
        bits
    }
}

fn advance(bold: bool) -> usize {
    GLYPH_W + 1 + usize::from(bold)
}

/// Rendered width of `text` in pixels.
pub fn text_width(text: &str, bold: bool) -> usize {
    let n = text.chars().count();
    if n == 0 {
        0
    } else {
        n * advance(bold) - 1
    }
}

fn put(img: &mut GrayImage, x: usize, y: usize, v: u8, clip: &BBox) {
    let (xf, yf) = (x as f64, y as f64);
    if xf >= clip.x1 && xf < clip.x2 && yf >= clip.y1 && yf < clip.y2 {
        img.set(x, y, v);
    }
}

/// Draws `text` inside `bbox`: headers centred and bold, attributes left,
/// data right aligned. Ink outside the box is clipped.
pub fn draw_text(img: &mut GrayImage, bbox: &BBox, text: &str, ty: Option<CellType>) {
    let bold = ty == Some(CellType::Header);
    let w = text_width(text, bold) as f64;
    let left = match ty {
        Some(CellType::Header) => bbox.x1 + ((bbox.width() - w) / 2.0).max(0.0),
        Some(CellType::Attribute) | None => bbox.x1 + 1.0,
        Some(CellType::Data) => (bbox.x2 - 1.0 - w).max(bbox.x1),
    };
    let top = bbox.y1 + ((bbox.height() - GLYPH_H as f64) / 2.0).max(0.0);
    let (x0, y0) = (left.floor() as usize, top.floor() as usize);
    for (k, ch) in text.chars().enumerate() {
        let g = glyph(ch);
        let gx = x0 + k * advance(bold);
        for r in 0..GLYPH_H {
            for c in 0..GLYPH_W {
                if g >> (r * GLYPH_W + c) & 1 == 1 {
                    put(img, gx + c, y0 + r, INK, bbox);
                    if bold {
                        put(img, gx + c + 1, y0 + r, INK, bbox);
                    }
                }
            }
        }
    }
}

/// Draws the edges of one grid rectangle `[x1, x2] x [y1, y2]` (inclusive
/// pixel lines) according to `style`.
pub fn draw_borders(img: &mut GrayImage, rect: (usize, usize, usize, usize), style: BorderStyle) {
    let (x1, x2, y1, y2) = rect;
    if style == BorderStyle::None {
        return;
    }
    for x in x1..=x2 {
        img.set(x, y1, RULE);
        img.set(x, y2, RULE);
    }
    if style == BorderStyle::Full {
        for y in y1..=y2 {
            img.set(x1, y, RULE);
            img.set(x2, y, RULE);
        }
    }
}
