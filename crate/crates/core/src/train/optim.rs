use crate::autodiff::{ParamKind, ParamStore};
use crate::error::{Error, Result};

/// Adam hyperparameters. `weight_decay` is applied decoupled from the
/// gradient: `theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr0: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: Vec<f32>,
    pub second: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    pub step: u64,
    /// Indexed like the parameter store; `None` for buffers.
    pub moments: Vec<Option<Moments>>,
}

impl OptimState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let moments = store
            .iter()
            .map(|(_, p)| {
                (p.kind == ParamKind::Trainable).then(|| Moments {
                    first: vec![0.0; p.tensor.numel()],
                    second: vec![0.0; p.tensor.numel()],
                })
            })
            .collect();
        OptimState {
            config,
            step: 0,
            moments,
        }
    }
}

/// One bias-corrected Adam update of every trainable parameter from the
/// gradients stored in its slot (absent slots count as zero).
///
/// Gradients are checked before anything is modified, so a non-finite
/// gradient leaves both parameters and state untouched.
pub fn adam_step(store: &mut ParamStore, state: &mut OptimState, lr: f64) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    if state.moments.len() != store.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "optimizer tracks {} parameters, store has {}",
                state.moments.len(),
                store.len()
            ),
        ));
    }
    for ((_, p), m) in store.iter().zip(&state.moments) {
        if let (Some(m), ParamKind::Trainable) = (m, p.kind) {
            if m.first.len() != p.tensor.numel() {
                return Err(Error::shape(
                    "adam_step",
                    format!("moments of {} do not match its shape {}", p.name, p.tensor.shape()),
                ));
            }
        }
        if let Some(g) = p.tensor.grad() {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {} at element {i}", p.name)));
            }
        }
    }

    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - c.beta1.powi(t);
    let bias2 = 1.0 - c.beta2.powi(t);
    let decay = 1.0 - lr * c.weight_decay;
    for ((_, p), m) in store.iter_mut().zip(state.moments.iter_mut()) {
        let Some(m) = m else { continue };
        let tensor = &mut p.tensor;
        let grad = tensor.grad().map(|g| g.to_vec());
        let data = tensor.data_mut();
        for i in 0..data.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[i] as f64);
            let m1 = c.beta1 * m.first[i] as f64 + (1.0 - c.beta1) * g;
            let m2 = c.beta2 * m.second[i] as f64 + (1.0 - c.beta2) * g * g;
            m.first[i] = m1 as f32;
            m.second[i] = m2 as f32;
            let update = (m1 / bias1) / ((m2 / bias2).sqrt() + c.eps);
            data[i] = (data[i] as f64 * decay - lr * update) as f32;
        }
    }
    Ok(())
}
