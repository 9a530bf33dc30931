//! Binary erosion, dilation, opening and closing with a symmetric
//! structuring element.
//!
//! Pixels outside the image count as foreground for erosion and background
//! for dilation. With that convention erosion and dilation form an
//! adjunction, so opening never adds pixels, closing never removes them and
//! both are idempotent.

use super::BinaryMask;
use crate::error::{Error, Result};

/// Symmetric structuring element stored as one horizontal run per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    /// `(dy, half_width)`: row `dy` covers `dx` in `-half_width..=half_width`.
    rows: Vec<(isize, usize)>,
}

impl StructuringElement {
    /// Filled ellipse inscribed in a `k x k` square (`k` odd): offset
    /// `(dy, dx)` belongs to it when `dx^2 + dy^2 <= (k/2)^2`.
    pub fn ellipse(k: usize) -> Result<Self> {
        if k == 0 || k % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "structuring element size must be odd and positive, got {k}"
            )));
        }
        let r = (k / 2) as isize;
        let rr = (k as f64 / 2.0).powi(2);
        let rows = (-r..=r)
            .map(|dy| {
                let hw = (0..=r)
                    .take_while(|&dx| ((dx * dx + dy * dy) as f64) <= rr)
                    .last()
                    .unwrap_or(0);
                (dy, hw as usize)
            })
            .collect();
        Ok(StructuringElement { rows })
    }

    pub fn contains(&self, dy: isize, dx: isize) -> bool {
        self.rows
            .iter()
            .any(|&(ry, hw)| ry == dy && dx.unsigned_abs() <= hw)
    }

    /// All `(dy, dx)` offsets.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        self.rows
            .iter()
            .flat_map(|&(dy, hw)| (-(hw as isize)..=hw as isize).map(move |dx| (dy, dx)))
            .collect()
    }
}

/// Prefix counts of set pixels per row: `rows[y][x]` counts `0..x`.
fn row_prefix(mask: &BinaryMask) -> Vec<Vec<u32>> {
    let (h, w) = mask.dims();
    (0..h)
        .map(|y| {
            let mut p = Vec::with_capacity(w + 1);
            p.push(0u32);
            let mut acc = 0;
            for x in 0..w {
                acc += mask.get(y, x) as u32;
                p.push(acc);
            }
            p
        })
        .collect()
}

pub fn erode(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let (h, w) = mask.dims();
    let prefix = row_prefix(mask);
    BinaryMask::from_fn(h, w, |y, x| {
        se.rows.iter().all(|&(dy, hw)| {
            let sy = y as isize + dy;
            if sy < 0 || sy >= h as isize {
                return true;
            }
            let lo = x.saturating_sub(hw);
            let hi = (x + hw).min(w - 1);
            let p = &prefix[sy as usize];
            (p[hi + 1] - p[lo]) as usize == hi - lo + 1
        })
    })
}

pub fn dilate(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let (h, w) = mask.dims();
    let prefix = row_prefix(mask);
    BinaryMask::from_fn(h, w, |y, x| {
        se.rows.iter().any(|&(dy, hw)| {
            let sy = y as isize + dy;
            if sy < 0 || sy >= h as isize {
                return false;
            }
            let lo = x.saturating_sub(hw);
            let hi = (x + hw).min(w - 1);
            let p = &prefix[sy as usize];
            p[hi + 1] > p[lo]
        })
    })
}

pub fn open(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    dilate(&erode(mask, se), se)
}

pub fn close(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    erode(&dilate(mask, se), se)
}

/// Opening with an elliptical element of size `open_k`, then closing with
/// one of size `close_k`. Size 1 skips the corresponding step.
pub fn morph_smooth(mask: &BinaryMask, open_k: usize, close_k: usize) -> Result<BinaryMask> {
    let opened = if open_k == 1 {
        mask.clone()
    } else {
        open(mask, &StructuringElement::ellipse(open_k)?)
    };
    Ok(if close_k == 1 {
        opened
    } else {
        close(&opened, &StructuringElement::ellipse(close_k)?)
    })
}
