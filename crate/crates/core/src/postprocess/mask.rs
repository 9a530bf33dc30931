use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Row-major boolean image.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    bits: Vec<bool>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMask {}x{} ({} set)", self.h, self.w, self.count())?;
        if self.h * self.w <= 64 * 64 {
            for y in 0..self.h {
                let row: String = (0..self.w).map(|x| if self.get(y, x) { '#' } else { '.' }).collect();
                writeln!(f, "{row}")?;
            }
        }
        Ok(())
    }
}

impl BinaryMask {
    /// All-unset mask. Panics if either side is zero.
    pub fn empty(h: usize, w: usize) -> Self {
        assert!(h > 0 && w > 0, "mask dimensions must be positive");
        BinaryMask {
            h,
            w,
            bits: vec![false; h * w],
        }
    }

    pub fn full(h: usize, w: usize) -> Self {
        let mut m = Self::empty(h, w);
        m.bits.iter_mut().for_each(|b| *b = true);
        m
    }

    pub fn from_bits(h: usize, w: usize, bits: Vec<bool>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!("mask dimensions {h}x{w} must be positive")));
        }
        if bits.len() != h * w {
            return Err(Error::shape("mask", format!("{} bits for {h}x{w}", bits.len())));
        }
        Ok(BinaryMask { h, w, bits })
    }

    /// Builds a mask from rows of `#` (set) and `.` (unset).
    pub fn from_ascii(rows: &[&str]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        let mut bits = Vec::with_capacity(h * w);
        for r in rows {
            if r.len() != w {
                return Err(Error::shape("mask", "ragged ascii rows"));
            }
            bits.extend(r.chars().map(|c| c == '#'));
        }
        Self::from_bits(h, w, bits)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.w + x] = v;
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixels as `(y, x)` in raster order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.w;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                "mask",
                format!("{}x{} vs {}x{}", self.h, self.w, other.h, other.w),
            ));
        }
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count())
    }

    /// `1.0` for set pixels, `0.0` elsewhere, shaped `1x1xhxw`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            Shape::new(1, 1, self.h, self.w),
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("shape matches")
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(h, w);
        for y in 0..h {
            for x in 0..w {
                m.bits[y * w + x] = f(y, x);
            }
        }
        m
    }
}

/// Axis-aligned box with inclusive pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        debug_assert!(x0 <= x1 && y0 <= y1);
        BBox { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1) as f64 / 2.0,
            (self.y0 + self.y1) as f64 / 2.0,
        )
    }

    /// Length of the diagonal measured on pixel extents.
    pub fn diag(&self) -> f64 {
        (self.width() as f64).hypot(self.height() as f64)
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    /// Inclusive point test; a point on an edge is inside.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x <= self.x1 as f64 && y >= self.y0 as f64 && y <= self.y1 as f64
    }

    pub fn translate(&self, dx: usize, dy: usize) -> BBox {
        BBox::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.x0, self.y0, self.x1, self.y1)
    }
}

/// Binarizes a `1x1xhxw` probability map with the strict rule `p > t`.
pub fn threshold(prob: &Tensor, t: f32) -> Result<BinaryMask> {
    let s = prob.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::shape("threshold", format!("expected 1x1xHxW, got {s}")));
    }
    BinaryMask::from_bits(s.h, s.w, prob.data().iter().map(|&p| p > t).collect())
}
