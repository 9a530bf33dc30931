//! Run configuration: model, training and post-processing settings read
//! from a `key=value` file, then `--set` overrides, then explicit flags.

use std::path::Path;

use anyhow::{Context, Result};
use polypseg::data::AugmentPolicy;
use polypseg::model::{parse_kv, ModelConfig};
use polypseg::postprocess::PostProcessConfig;
use polypseg::train::FitConfig;
use polypseg::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub fit: FitConfig,
    /// Cosine period; follows `fit.epochs` unless set.
    pub t_max: Option<usize>,
    /// When set, every sample is border-cropped and resized to this size.
    pub input_size: Option<(usize, usize)>,
    pub post: PostProcessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::toy(),
            fit: FitConfig::default(),
            t_max: None,
            input_size: None,
            post: PostProcessConfig::default(),
        }
    }
}

pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    if h == 0 || w == 0 {
        return Err(format!("size must be positive, got {s:?}"));
    }
    Ok((h, w))
}

pub fn parse_bool(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "true" | "on" | "yes" => Some(true),
        "0" | "false" | "off" | "no" => Some(false),
        _ => None,
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> polypseg::Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> polypseg::Result<()> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        let v = value.trim();
        match key.trim() {
            "epochs" => self.fit.epochs = num(key, v)?,
            "batch_size" => self.fit.batch_size = num(key, v)?,
            "seed" => self.fit.seed = num(key, v)?,
            "lr" => self.fit.adam.lr0 = num(key, v)?,
            "beta1" => self.fit.adam.beta1 = num(key, v)?,
            "beta2" => self.fit.adam.beta2 = num(key, v)?,
            "eps" => self.fit.adam.eps = num(key, v)?,
            "weight_decay" => self.fit.adam.weight_decay = num(key, v)?,
            "t_max" => self.t_max = Some(num(key, v)?),
            "max_steps" => self.fit.max_steps = Some(num(key, v)?),
            "augment" => {
                let on = parse_bool(v).ok_or_else(|| Error::Config(format!("augment: expected on/off, got {v:?}")))?;
                self.fit.augment = on.then(AugmentPolicy::default);
            }
            "input_size" => self.input_size = Some(parse_size(v).map_err(Error::Config)?),
            "threshold" => {
                let t = num(key, v)?;
                self.fit.threshold = t;
                self.post.threshold = t;
            }
            "open_k" => self.post.open_k = num(key, v)?,
            "close_k" => self.post.close_k = num(key, v)?,
            "min_area" => self.post.min_area = num(key, v)?,
            "merge" => {
                self.post.merge = parse_bool(v).ok_or_else(|| Error::Config(format!("merge: expected on/off, got {v:?}")))?
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> polypseg::Result<()> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// `--set key=value` arguments, in order.
    pub fn apply_overrides(&mut self, sets: &[String]) -> polypseg::Result<()> {
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {s:?}")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            cfg.apply_text(&text).with_context(|| format!("config {}", p.display()))?;
        }
        cfg.apply_overrides(sets)?;
        Ok(cfg)
    }

    /// Training settings with the cosine period resolved.
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            t_max: self.t_max.unwrap_or(self.fit.epochs),
            ..self.fit.clone()
        }
    }
}
