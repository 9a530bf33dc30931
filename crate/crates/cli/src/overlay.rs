//! Overlay rendering: mask tint, box outlines and a legend strip under
//! the image. The top `h` rows of an overlay without mask pixels or boxes
//! equal the input image.

use polypseg::postprocess::{BBox, BinaryMask};

pub const MASK_RGB: [u8; 3] = [128, 0, 128];
pub const PRED_RGB: [u8; 3] = [0, 255, 0];
pub const GT_RGB: [u8; 3] = [255, 0, 0];
const TEXT_RGB: [u8; 3] = [255, 255, 255];
pub const LEGEND_H: usize = 9;

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canvas {
    pub h: usize,
    pub w: usize,
    pub rgb: Vec<u8>,
}

impl Canvas {
    pub fn new(h: usize, w: usize) -> Self {
        Canvas { h, w, rgb: vec![0; h * w * 3] }
    }

    fn put(&mut self, y: usize, x: usize, c: [u8; 3]) {
        if y < self.h && x < self.w {
            let i = (y * self.w + x) * 3;
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    fn fill(&mut self, y0: usize, x0: usize, h: usize, w: usize, c: [u8; 3]) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.put(y, x, c);
            }
        }
    }

    /// One-pixel outline of an inclusive box.
    pub fn outline(&mut self, b: &BBox, c: [u8; 3]) {
        for x in b.x0..=b.x1 {
            self.put(b.y0, x, c);
            self.put(b.y1, x, c);
        }
        for y in b.y0..=b.y1 {
            self.put(y, b.x0, c);
            self.put(y, b.x1, c);
        }
    }

    /// Blends `c` into every set pixel with weight one half.
    pub fn tint(&mut self, mask: &BinaryMask, c: [u8; 3]) {
        for (y, x) in mask.iter_set() {
            let i = (y * self.w + x) * 3;
            for k in 0..3 {
                self.rgb[i + k] = ((self.rgb[i + k] as u16 + c[k] as u16 + 1) / 2) as u8;
            }
        }
    }
}

// 3x5 glyphs, one row per entry, high bit on the left.
fn glyph(ch: char) -> [u8; 5] {
    match ch {
        'A' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'D' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'E' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'G' => [0b011, 0b100, 0b101, 0b101, 0b011],
        'K' => [0b101, 0b101, 0b110, 0b101, 0b101],
        'M' => [0b101, 0b111, 0b111, 0b101, 0b101],
        'P' => [0b110, 0b101, 0b110, 0b100, 0b100],
        'R' => [0b110, 0b101, 0b110, 0b101, 0b101],
        'S' => [0b011, 0b100, 0b010, 0b001, 0b110],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        _ => [0; 5],
    }
}

/// Draws `text` with its top-left corner at (y, x); returns the x after it.
fn text(c: &mut Canvas, y: usize, mut x: usize, s: &str) -> usize {
    for ch in s.chars() {
        for (dy, row) in glyph(ch).iter().enumerate() {
            for dx in 0..3 {
                if row >> (2 - dx) & 1 == 1 {
                    c.put(y + dy, x + dx, TEXT_RGB);
                }
            }
        }
        x += 4;
    }
    x
}

fn legend(c: &mut Canvas, y0: usize) {
    let y = y0 + 2;
    let mut x = 2;
    for (label, color) in [("MASK", MASK_RGB), ("PRED", PRED_RGB), ("GT", GT_RGB)] {
        c.fill(y, x, 5, 4, color);
        x = text(c, y, x + 5, label) + 3;
    }
}

/// Input image with the predicted mask tinted, ground-truth boxes in red,
/// prediction boxes in green and a legend strip appended below.
pub fn render(h: usize, w: usize, rgb: &[u8], mask: &BinaryMask, pred: &[BBox], gt: &[BBox]) -> Canvas {
    assert_eq!(rgb.len(), h * w * 3);
    assert_eq!(mask.dims(), (h, w));
    let mut c = Canvas::new(h + LEGEND_H, w);
    c.rgb[..h * w * 3].copy_from_slice(rgb);
    c.tint(mask, MASK_RGB);
    for b in gt {
        c.outline(b, GT_RGB);
    }
    for b in pred {
        c.outline(b, PRED_RGB);
    }
    legend(&mut c, h);
    c
}
