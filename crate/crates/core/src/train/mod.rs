//! Optimization: Adam with decoupled weight decay, cosine annealing, the
//! training loop and binary checkpoints.

mod checkpoint;
mod fit;
mod optim;
mod schedule;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use fit::{fit, fit_with, mean_dice, predict, predict_any_size, BestSnapshot, EpochRecord, FitConfig, TrainingHistory};
pub use optim::{adam_step, AdamConfig, Moments, OptimState};
pub use schedule::cosine_lr;
