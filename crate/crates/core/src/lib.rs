//! Dilated-convolution encoder/decoder for binary polyp segmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: NCHW tensors, forward kernels and a
//!   reverse-mode tape.
//! - [`model`]: the bottleneck-residual encoder with a dilated, non-strided
//!   last stage and the concatenating decoder.
//! - [`train`]: Adam with decoupled weight decay, cosine annealing, the
//!   training loop and checkpoints.
//! - [`postprocess`]: thresholding, morphological smoothing, small-object
//!   removal, connected components and nearby-box merging.
//! - [`metrics`]: Dice and center-in-box detection scores.
//! - [`data`]: preprocessing, augmentation, a synthetic dataset generator
//!   and PNG dataset I/O.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod postprocess;
pub mod train;
pub mod tensor;

pub use error::{Error, ErrorClass, Result};
