//! Turning probability maps into clean masks and detection boxes:
//! threshold, morphological smoothing, small-object removal, connected
//! components, bounding boxes and merging of nearby boxes.

mod components;
mod mask;
mod merge;
mod morphology;

pub use components::{drop_small, label_components, scaled_min_area, Component, REFERENCE_SIDE};
pub use mask::{threshold, BBox, BinaryMask};
pub use merge::{canonical_order, is_merge_fixpoint, merge_nearby, should_merge};
pub use morphology::{close, dilate, erode, morph_smooth, open, StructuringElement};

use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct PostProcessConfig {
    pub threshold: f32,
    /// Opening element size; 1 disables opening.
    pub open_k: usize,
    /// Closing element size; 1 disables closing.
    pub close_k: usize,
    /// Minimum component area at 384x384, scaled with image area.
    pub min_area: usize,
    pub merge: bool,
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        PostProcessConfig {
            threshold: 0.5,
            open_k: 5,
            close_k: 9,
            min_area: 100,
            merge: true,
        }
    }
}

impl PostProcessConfig {
    /// Threshold only: raw components, no smoothing, dropping or merging.
    pub fn disabled() -> Self {
        PostProcessConfig {
            threshold: 0.5,
            open_k: 1,
            close_k: 1,
            min_area: 0,
            merge: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostProcessed {
    pub mask: BinaryMask,
    pub boxes: Vec<BBox>,
}

/// Post-processes an already binarized mask.
pub fn postprocess_mask(mask: &BinaryMask, cfg: &PostProcessConfig) -> Result<PostProcessed> {
    let smoothed = morph_smooth(mask, cfg.open_k, cfg.close_k)?;
    let (h, w) = smoothed.dims();
    let kept = drop_small(
        label_components(&smoothed),
        scaled_min_area(cfg.min_area, h, w),
    );
    let mut out = BinaryMask::empty(h, w);
    for c in &kept {
        for &(y, x) in &c.pixels {
            out.set(y, x, true);
        }
    }
    let mut boxes: Vec<BBox> = kept.iter().map(|c| c.bbox).collect();
    if cfg.merge {
        boxes = merge_nearby(&boxes);
    } else {
        canonical_order(&mut boxes);
    }
    Ok(PostProcessed { mask: out, boxes })
}

/// Full pipeline on a `1x1xhxw` probability map.
pub fn postprocess(prob: &Tensor, cfg: &PostProcessConfig) -> Result<PostProcessed> {
    postprocess_mask(&threshold(prob, cfg.threshold)?, cfg)
}
