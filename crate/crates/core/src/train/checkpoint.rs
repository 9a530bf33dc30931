//! Binary checkpoints. All integers and reals are little-endian.
//!
//! ```text
//! "PSEG"  u32 version
//! u32 len, model config as key=value text
//! 3 x f64 mean, 3 x f64 std
//! u32 count, then per parameter:
//!     u32 len, name, u8 kind (0 trainable, 1 buffer), 4 x u32 dims, f32 values
//! u8 has_optimizer; if 1:
//!     u64 step, 5 x f64 (lr0, beta1, beta2, eps, weight_decay)
//!     per parameter: u8 present; if 1, first then second moments as f32
//! ```

use std::path::Path;

use super::{AdamConfig, Moments, OptimState};
use crate::autodiff::{ParamKind, ParamStore};
use crate::data::DatasetStats;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"PSEG";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub stats: DatasetStats,
    pub params: ParamStore,
    pub optim: Option<OptimState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend(v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f32s(&mut self, vs: &[f32]) {
        for v in vs {
            self.0.extend(v.to_le_bytes());
        }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::Checkpoint(format!("{what}: size overflow")))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} is not utf-8")))
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model, stats: &DatasetStats, optim: Option<&OptimState>) -> Self {
        Checkpoint {
            config: model.config().clone(),
            stats: *stats,
            params: model.params().clone(),
            optim: optim.cloned(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend(MAGIC);
        w.u32(VERSION);
        w.bytes(self.config.to_kv().as_bytes());
        for v in self.stats.mean.iter().chain(&self.stats.std) {
            w.f64(*v);
        }
        w.u32(self.params.len() as u32);
        for (_, p) in self.params.iter() {
            w.bytes(p.name.as_bytes());
            w.u8(match p.kind {
                ParamKind::Trainable => 0,
                ParamKind::Buffer => 1,
            });
            for d in p.tensor.shape().dims() {
                w.u32(d as u32);
            }
            w.f32s(p.tensor.data());
        }
        match &self.optim {
            None => w.u8(0),
            Some(o) => {
                w.u8(1);
                w.u64(o.step);
                let c = o.config;
                for v in [c.lr0, c.beta1, c.beta2, c.eps, c.weight_decay] {
                    w.f64(v);
                }
                for m in &o.moments {
                    match m {
                        None => w.u8(0),
                        Some(m) => {
                            w.u8(1);
                            w.f32s(&m.first);
                            w.f32s(&m.second);
                        }
                    }
                }
            }
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4, "magic").ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("not a checkpoint (bad magic bytes)".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {VERSION})"
            )));
        }
        let config = ModelConfig::from_kv(&r.string("model config")?)?;
        let mut stats = DatasetStats::identity();
        for c in 0..3 {
            stats.mean[c] = r.f64("stats")?;
        }
        for c in 0..3 {
            stats.std[c] = r.f64("stats")?;
        }
        let count = r.u32("parameter count")? as usize;
        let mut params = ParamStore::new();
        let mut sizes = Vec::new();
        for i in 0..count {
            let name = r.string(&format!("name of parameter {i}"))?;
            let kind = match r.u8(&name)? {
                0 => ParamKind::Trainable,
                1 => ParamKind::Buffer,
                k => return Err(Error::Checkpoint(format!("{name}: unknown kind {k}"))),
            };
            let mut d = [0usize; 4];
            for v in &mut d {
                *v = r.u32(&name)? as usize;
            }
            let shape = Shape::new(d[0], d[1], d[2], d[3]);
            let numel = d.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
            let numel = numel.ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
            let data = r.f32s(numel, &name)?;
            params
                .add(name, kind, Tensor::from_vec(shape, data)?)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            sizes.push(numel);
        }
        let optim = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let step = r.u64("optimizer step")?;
                let mut h = [0.0; 5];
                for v in &mut h {
                    *v = r.f64("optimizer config")?;
                }
                let mut moments = Vec::with_capacity(count);
                for &n in &sizes {
                    moments.push(match r.u8("moment flag")? {
                        0 => None,
                        1 => Some(Moments {
                            first: r.f32s(n, "moments")?,
                            second: r.f32s(n, "moments")?,
                        }),
                        f => return Err(Error::Checkpoint(format!("bad moment flag {f}"))),
                    });
                }
                Some(OptimState {
                    config: AdamConfig {
                        lr0: h[0],
                        beta1: h[1],
                        beta2: h[2],
                        eps: h[3],
                        weight_decay: h[4],
                    },
                    step,
                    moments,
                })
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            stats,
            params,
            optim,
        })
    }

    /// Builds the model described by the checkpoint.
    pub fn into_model(self) -> Result<(Model, DatasetStats, Option<OptimState>)> {
        let mut model = Model::new(self.config, 0)?;
        model.load_params(&self.params)?;
        Ok((model, self.stats, self.optim))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

pub fn save_checkpoint(path: &Path, model: &Model, stats: &DatasetStats, optim: Option<&OptimState>) -> Result<()> {
    Checkpoint::from_model(model, stats, optim).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, DatasetStats, Option<OptimState>)> {
    Checkpoint::load(path)?.into_model()
}
