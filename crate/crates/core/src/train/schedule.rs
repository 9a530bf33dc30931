use std::f64::consts::PI;

/// Cosine annealing to zero: `lr0 * (1 + cos(pi * epoch / t_max)) / 2`.
///
/// Epochs past `t_max` get a learning rate of zero. With `t_max == 0` the
/// schedule is constant at `lr0` for epoch 0.
pub fn cosine_lr(epoch: usize, lr0: f64, t_max: usize) -> f64 {
    if epoch > t_max {
        return 0.0;
    }
    if t_max == 0 {
        return lr0;
    }
    lr0 * (1.0 + (PI * epoch as f64 / t_max as f64).cos()) / 2.0
}
