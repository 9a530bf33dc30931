//! Input side of the pipeline: black-border removal, resizing,
//! normalization statistics, augmentation, a synthetic polyp-like dataset
//! and PNG dataset I/O.

mod augment;
mod io;
mod preprocess;
mod synth;

pub use augment::{augment, Affine, AugmentPolicy};
pub use io::{
    image_to_rgb8, load_dataset, load_image, load_mask, save_dataset, save_image, save_mask, write_rgb8, LoadedDataset,
};
pub use preprocess::{
    compute_dataset_stats, crop_image, crop_mask, normalize, preprocess, remove_black_border, resize_image,
    resize_nearest, CropRect, DatasetStats, BLACK_LEVEL,
};
pub use synth::{gen_synthetic, gen_synthetic_scenes, Blob, SyntheticScene};

use crate::error::{Error, Result};
use crate::postprocess::BinaryMask;
use crate::tensor::Tensor;

/// One image with its ground-truth mask. Pixel values lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    /// `1x3xhxw`.
    pub image: Tensor,
    pub mask: BinaryMask,
}

impl ImageSample {
    pub fn new(id: impl Into<String>, image: Tensor, mask: BinaryMask) -> Result<Self> {
        let id = id.into();
        let s = image.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::shape("sample", format!("{id}: image must be 1x3xHxW, got {s}")));
        }
        if (s.h, s.w) != mask.dims() {
            return Err(Error::shape(
                "sample",
                format!("{id}: image {}x{} vs mask {}x{}", s.h, s.w, mask.height(), mask.width()),
            ));
        }
        Ok(ImageSample { id, image, mask })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }
}
