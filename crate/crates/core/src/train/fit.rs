use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{adam_step, cosine_lr, AdamConfig, OptimState};
use crate::autodiff::{ParamStore, Tape};
use crate::data::{augment, normalize, AugmentPolicy, DatasetStats, ImageSample};
use crate::error::{Error, Result};
use crate::metrics::dice;
use crate::model::{Mode, Model};
use crate::postprocess::threshold;
use crate::tensor::{resize_bilinear, sigmoid, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Length of the cosine schedule in epochs.
    pub t_max: usize,
    pub augment: Option<AugmentPolicy>,
    /// Stops after this many optimizer steps, mid-epoch if necessary.
    pub max_steps: Option<usize>,
    /// Probability threshold used for the per-epoch Dice.
    pub threshold: f32,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: 80,
            batch_size: 2,
            seed: 0,
            adam: AdamConfig::default(),
            t_max: 80,
            augment: None,
            max_steps: None,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    /// Mean Dice on the validation samples after the epoch.
    pub dice: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} lr={:e} loss={:.6} dice={:.6}",
            self.epoch, self.lr, self.loss, self.dice
        )
    }
}

#[derive(Debug, Clone)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub dice: f64,
    pub params: ParamStore,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    /// Parameters after the epoch with the highest validation Dice.
    pub best: Option<BestSnapshot>,
}

impl TrainingHistory {
    /// One line per epoch.
    pub fn to_text(&self) -> String {
        self.epochs.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// Stacks images (normalized) and masks of a batch into `n x 3 x h x w`
/// inputs and `n x 1 x h x w` targets.
fn make_batch(samples: &[ImageSample], stats: &DatasetStats) -> Result<(Tensor, Tensor)> {
    let imgs = samples
        .iter()
        .map(|s| normalize(&s.image, stats))
        .collect::<Result<Vec<_>>>()?;
    let masks: Vec<Tensor> = samples.iter().map(|s| s.mask.to_tensor()).collect();
    Ok((
        Tensor::stack(&imgs.iter().collect::<Vec<_>>())?,
        Tensor::stack(&masks.iter().collect::<Vec<_>>())?,
    ))
}

/// Sigmoid probabilities for one `1x3xhxw` image in `[0, 1]`.
pub fn predict(model: &Model, stats: &DatasetStats, image: &Tensor) -> Result<Tensor> {
    let mut p = model.forward(&normalize(image, stats)?)?;
    if !p.is_finite() {
        return Err(Error::NonFinite("model output".into()));
    }
    for v in p.data_mut() {
        *v = sigmoid(*v);
    }
    Ok(p)
}

/// Like [`predict`] for any image size: the image is resized to the
/// nearest multiple of the model's input granularity and the
/// probabilities are resized back.
pub fn predict_any_size(model: &Model, stats: &DatasetStats, image: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    let m = model.config().input_multiple();
    let snap = |v: usize| (((v + m / 2) / m) * m).max(m);
    let (th, tw) = (snap(s.h), snap(s.w));
    if (th, tw) == (s.h, s.w) {
        return predict(model, stats, image);
    }
    let p = predict(model, stats, &resize_bilinear(image, th, tw)?)?;
    resize_bilinear(&p, s.h, s.w)
}

/// Mean Dice of thresholded eval-mode predictions.
pub fn mean_dice(model: &Model, stats: &DatasetStats, samples: &[ImageSample], t: f32) -> Result<f64> {
    let mut sum = 0.0;
    for s in samples {
        let prob = predict(model, stats, &s.image)?;
        sum += dice(&threshold(&prob, t)?, &s.mask)?;
    }
    Ok(sum / samples.len() as f64)
}

/// Trains `model` in place.
///
/// Each epoch visits the training samples in a seeded random order, in
/// batches of `batch_size` (the last batch may be smaller). The learning
/// rate follows [`cosine_lr`] per epoch; an epoch whose rate is zero only
/// records the loss. Validation Dice is measured after every epoch on
/// `validation`, or on the unaugmented training set when none is given.
pub fn fit(
    model: &mut Model,
    train: &[ImageSample],
    validation: Option<&[ImageSample]>,
    stats: &DatasetStats,
    cfg: &FitConfig,
) -> Result<TrainingHistory> {
    fit_with(model, train, validation, stats, cfg, |_| {})
}

/// [`fit`] that reports every finished epoch to `on_epoch`.
pub fn fit_with(
    model: &mut Model,
    train: &[ImageSample],
    validation: Option<&[ImageSample]>,
    stats: &DatasetStats,
    cfg: &FitConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingHistory> {
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let dims = train[0].dims();
    if let Some(s) = train.iter().find(|s| s.dims() != dims) {
        return Err(Error::Data(format!(
            "{}: size {}x{} differs from {}x{}",
            s.id,
            s.dims().0,
            s.dims().1,
            dims.0,
            dims.1
        )));
    }
    if let Some(p) = &cfg.augment {
        p.validate()?;
    }
    stats.validate()?;
    let validation = validation.unwrap_or(train);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optim = OptimState::new(model.params(), cfg.adam);
    let mut history = TrainingHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    'epochs: for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.adam.lr0, cfg.t_max);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| history.steps >= m) {
                break;
            }
            let batch: Vec<ImageSample> = match &cfg.augment {
                Some(p) => chunk
                    .iter()
                    .map(|&i| augment(&train[i], p, rng.random()))
                    .collect::<Result<_>>()?,
                None => chunk.iter().map(|&i| train[i].clone()).collect(),
            };
            let (x, y) = make_batch(&batch, stats)?;

            let params = model.params_mut();
            params.zero_grads();
            let mut tape = Tape::new();
            let xv = tape.input(x);
            let out = model.forward_tape(&mut tape, xv, Mode::Train)?;
            let loss = tape.sigmoid_bce(out.logits, y).map_err(|e| {
                Error::NonFinite(format!("loss at epoch {epoch}, step {}: {e}", history.steps))
            })?;
            let loss_val = tape.value(loss).data()[0];
            if !loss_val.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {loss_val} at epoch {epoch}, step {}",
                    history.steps
                )));
            }
            tape.backward(loss, model.params_mut())?;
            let updates = tape.take_running_updates();
            model.params_mut().apply_running_updates(updates);
            if lr > 0.0 {
                adam_step(model.params_mut(), &mut optim, lr)?;
            }
            history.steps += 1;
            loss_sum += loss_val as f64;
            batches += 1;
        }
        if batches == 0 {
            break 'epochs;
        }
        let d = mean_dice(model, stats, validation, cfg.threshold)?;
        let record = EpochRecord {
            epoch,
            lr,
            loss: loss_sum / batches as f64,
            dice: d,
        };
        on_epoch(&record);
        history.epochs.push(record);
        if history.best.as_ref().is_none_or(|b| d > b.dice) {
            history.best = Some(BestSnapshot {
                epoch,
                dice: d,
                params: without_grads(model.params()),
            });
        }
    }
    clear_grads(model.params_mut());
    Ok(history)
}

fn clear_grads(store: &mut ParamStore) {
    for (_, p) in store.iter_mut() {
        p.tensor.clear_grad();
    }
}

fn without_grads(store: &ParamStore) -> ParamStore {
    let mut s = store.clone();
    clear_grads(&mut s);
    s
}
