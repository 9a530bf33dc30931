//! Encoder/decoder segmentation network.
//!
//! The encoder is a bottleneck-residual backbone (stem, max pool, four
//! stages of 1x1 -> 3x3 -> 1x1 blocks). Its last stage keeps the resolution
//! of stage 4 by default: the stage's entry convolution uses stride 1 and
//! all of its 3x3 convolutions use dilation 2 instead.
//!
//! The default decoder reduces each tapped stage with a 1x1 convolution,
//! upsamples it bilinearly straight to the input size, concatenates all
//! branches and applies two 3x3 convolutions and a final 1x1 convolution.

mod config;
mod receptive;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use config::{parse_kv, DecoderStyle, ModelConfig, Stage};
pub use receptive::{receptive_field, ReceptiveField};

use crate::autodiff::{BatchNormParams, ParamId, ParamKind, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormConfig, ConvSpec, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics updates are recorded on the tape.
    Train,
    /// Running statistics.
    Eval,
}

impl Mode {
    fn training(self) -> bool {
        self == Mode::Train
    }
}

/// Convolution without bias followed by batch normalization.
#[derive(Debug, Clone)]
struct ConvBn {
    weight: ParamId,
    bn: BatchNormParams,
    spec: ConvSpec,
}

impl ConvBn {
    fn forward(&self, m: &Model, tape: &mut Tape, x: Var, mode: Mode, relu: bool) -> Result<Var> {
        let w = tape.param(&m.store, self.weight);
        let y = tape.conv2d(x, w, None, self.spec)?;
        let y = tape.batch_norm(y, &self.bn, &m.store, mode.training(), m.bn)?;
        Ok(if relu { tape.relu(y) } else { y })
    }
}

#[derive(Debug, Clone)]
struct Bottleneck {
    reduce: ConvBn,
    spatial: ConvBn,
    expand: ConvBn,
    shortcut: Option<ConvBn>,
}

impl Bottleneck {
    fn forward(&self, m: &Model, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let y = self.reduce.forward(m, tape, x, mode, true)?;
        let y = self.spatial.forward(m, tape, y, mode, true)?;
        let y = self.expand.forward(m, tape, y, mode, false)?;
        let skip = match &self.shortcut {
            Some(proj) => proj.forward(m, tape, x, mode, false)?,
            None => x,
        };
        let sum = tape.add(y, skip)?;
        Ok(tape.relu(sum))
    }
}

#[derive(Debug, Clone)]
struct Head {
    conv1: ConvBn,
    conv2: ConvBn,
    out_weight: ParamId,
    out_bias: ParamId,
}

impl Head {
    fn forward(&self, m: &Model, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let y = self.conv1.forward(m, tape, x, mode, true)?;
        let y = self.conv2.forward(m, tape, y, mode, true)?;
        let w = tape.param(&m.store, self.out_weight);
        let b = tape.param(&m.store, self.out_bias);
        tape.conv2d(y, w, Some(b), ConvSpec::new(1, 1))
    }
}

#[derive(Debug, Clone)]
enum Decoder {
    Direct {
        reduce: Vec<ConvBn>,
        head: Head,
    },
    Unet {
        reduce: Vec<ConvBn>,
        /// One fusion conv per step, deepest-but-one tap first.
        fuse: Vec<ConvBn>,
        head: Head,
    },
}

/// Stage outputs of one encoder pass.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub input_size: (usize, usize),
    pub maps: BTreeMap<Stage, Tensor>,
}

impl FeaturePyramid {
    pub fn get(&self, stage: Stage) -> Option<&Tensor> {
        self.maps.get(&stage)
    }
}

/// Tape handles produced by one full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub stages: [Var; 5],
    /// Concatenated decoder block (direct decoder only).
    pub concat: Option<Var>,
    pub logits: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    bn: BatchNormConfig,
    stem: ConvBn,
    stages: Vec<Vec<Bottleneck>>,
    decoder: Decoder,
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn he(&mut self, name: &str, co: usize, ci: usize, k: usize) -> Result<ParamId> {
        let fan_in = (ci * k * k) as f32;
        let normal = Normal::new(0.0f32, (2.0 / fan_in).sqrt()).expect("positive std");
        let shape = Shape::new(co, ci, k, k);
        let data = (0..shape.numel()).map(|_| normal.sample(self.rng)).collect();
        self.store
            .add(name, ParamKind::Trainable, Tensor::from_vec(shape, data)?)
    }

    fn bn(&mut self, name: &str, c: usize) -> Result<BatchNormParams> {
        let shape = Shape::new(1, c, 1, 1);
        Ok(BatchNormParams {
            gamma: self.store.add(
                format!("{name}.gamma"),
                ParamKind::Trainable,
                Tensor::full(shape, 1.0),
            )?,
            beta: self
                .store
                .add(format!("{name}.beta"), ParamKind::Trainable, Tensor::zeros(shape))?,
            running_mean: self.store.add(
                format!("{name}.running_mean"),
                ParamKind::Buffer,
                Tensor::zeros(shape),
            )?,
            running_var: self.store.add(
                format!("{name}.running_var"),
                ParamKind::Buffer,
                Tensor::full(shape, 1.0),
            )?,
        })
    }

    fn conv_bn(&mut self, name: &str, ci: usize, co: usize, spec: ConvSpec) -> Result<ConvBn> {
        Ok(ConvBn {
            weight: self.he(&format!("{name}.weight"), co, ci, spec.kernel.0)?,
            bn: self.bn(&format!("{name}.bn"), co)?,
            spec,
        })
    }

    fn head(&mut self, ci: usize, width: usize) -> Result<Head> {
        let conv1 = self.conv_bn("decoder.head.conv1", ci, width, ConvSpec::same(3, 1, 1))?;
        let conv2 = self.conv_bn("decoder.head.conv2", width, width, ConvSpec::same(3, 1, 1))?;
        let out_weight = self.he("decoder.head.out.weight", 1, width, 1)?;
        let out_bias = self.store.add(
            "decoder.head.out.bias",
            ParamKind::Trainable,
            Tensor::zeros(Shape::new(1, 1, 1, 1)),
        )?;
        Ok(Head {
            conv1,
            conv2,
            out_weight,
            out_bias,
        })
    }
}

impl Model {
    /// Builds the network with He-normal weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            store: ParamStore::new(),
            rng: &mut rng,
        };

        let stem_c = config.scaled_stem();
        let stem = b.conv_bn(
            "encoder.stem",
            config.in_channels,
            stem_c,
            ConvSpec::new(7, 7).with_stride(2).with_padding(3),
        )?;

        let mut stages = Vec::with_capacity(4);
        let mut in_c = stem_c;
        for si in 0..4 {
            let stage = Stage::ALL[si + 1];
            let out_c = config.scaled_stage(stage);
            let mid_c = (out_c / 4).max(1);
            let (stride, dilation) = match stage {
                Stage::R2 => (1, 1),
                Stage::R5 => (config.stage5_stride, config.stage5_dilation),
                _ => (2, 1),
            };
            let mut blocks = Vec::with_capacity(config.stage_blocks[si]);
            for bi in 0..config.stage_blocks[si] {
                let name = format!("encoder.stage{}.block{bi}", si + 2);
                let s = if bi == 0 { stride } else { 1 };
                let reduce = b.conv_bn(&format!("{name}.reduce"), in_c, mid_c, ConvSpec::new(1, 1))?;
                let spatial = b.conv_bn(
                    &format!("{name}.spatial"),
                    mid_c,
                    mid_c,
                    ConvSpec::same(3, s, dilation),
                )?;
                let expand = b.conv_bn(&format!("{name}.expand"), mid_c, out_c, ConvSpec::new(1, 1))?;
                let shortcut = if s != 1 || in_c != out_c {
                    Some(b.conv_bn(
                        &format!("{name}.shortcut"),
                        in_c,
                        out_c,
                        ConvSpec::new(1, 1).with_stride(s),
                    )?)
                } else {
                    None
                };
                blocks.push(Bottleneck {
                    reduce,
                    spatial,
                    expand,
                    shortcut,
                });
                in_c = out_c;
            }
            stages.push(blocks);
        }

        let dims = config.scaled_decoder_dims();
        let mut reduce = Vec::with_capacity(dims.len());
        for (tap, &d) in config.encoder_taps.iter().zip(&dims) {
            reduce.push(b.conv_bn(
                &format!("decoder.reduce_{tap}"),
                config.scaled_stage(*tap),
                d,
                ConvSpec::new(1, 1),
            )?);
        }
        let head_c = config.scaled_head();
        let decoder = match config.decoder_style {
            DecoderStyle::Direct => Decoder::Direct {
                reduce,
                head: b.head(config.concat_channels(), head_c)?,
            },
            DecoderStyle::UnetSymmetric => {
                let order = unet_order(&config);
                let mut fuse = Vec::new();
                let mut cur = dims[order[0]];
                for &ti in &order[1..] {
                    let tap = config.encoder_taps[ti];
                    fuse.push(b.conv_bn(
                        &format!("decoder.fuse_{tap}"),
                        cur + dims[ti],
                        head_c,
                        ConvSpec::same(3, 1, 1),
                    )?);
                    cur = head_c;
                }
                Decoder::Unet {
                    reduce,
                    fuse,
                    head: b.head(cur, head_c)?,
                }
            }
        };

        let store = b.store;
        Ok(Model {
            config,
            store,
            bn: BatchNormConfig::default(),
            stem,
            stages,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.store.num_trainable()
    }

    /// Replaces every parameter and buffer value from `source`, matching by
    /// name and shape.
    pub fn load_params(&mut self, source: &ParamStore) -> Result<()> {
        if source.len() != self.store.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count {} does not match model ({})",
                source.len(),
                self.store.len()
            )));
        }
        for (_, p) in source.iter() {
            let id = self
                .store
                .id(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", p.name)))?;
            let dst = &mut self.store.get_mut(id).tensor;
            if dst.shape() != p.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {} but model expects {}",
                    p.name,
                    p.tensor.shape(),
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(p.tensor.data());
        }
        Ok(())
    }

    fn check_input(&self, s: Shape) -> Result<()> {
        let m = self.config.input_multiple();
        if s.c != self.config.in_channels {
            return Err(Error::shape(
                "model",
                format!("input has {} channels, model expects {}", s.c, self.config.in_channels),
            ));
        }
        if s.h == 0 || s.w == 0 || s.h % m != 0 || s.w % m != 0 {
            return Err(Error::shape(
                "model",
                format!("input {}x{} is not a positive multiple of {m}", s.h, s.w),
            ));
        }
        Ok(())
    }

    /// Records the encoder on `tape`, returning R1..R5.
    pub fn encode(&self, tape: &mut Tape, x: Var, mode: Mode) -> Result<[Var; 5]> {
        self.check_input(tape.value(x).shape())?;
        let r1 = self.stem.forward(self, tape, x, mode, true)?;
        let mut y = tape.max_pool2d(r1, 3, 2, 1)?;
        let mut outs = [r1; 5];
        for (si, blocks) in self.stages.iter().enumerate() {
            for block in blocks {
                y = block.forward(self, tape, y, mode)?;
            }
            outs[si + 1] = y;
        }
        Ok(outs)
    }

    /// Records the decoder on `tape` given the tapped stage outputs.
    pub fn decode(
        &self,
        tape: &mut Tape,
        stages: &[Var; 5],
        input_size: (usize, usize),
        mode: Mode,
    ) -> Result<(Option<Var>, Var)> {
        let (h, w) = input_size;
        let taps = &self.config.encoder_taps;
        let check_stride = |tape: &Tape, tap: Stage, v: Var| -> Result<usize> {
            let s = tape.value(v).shape();
            let stride = self.config.stage_stride(tap);
            if s.h * stride != h || s.w * stride != w {
                return Err(Error::shape(
                    "decoder",
                    format!(
                        "tap {tap} is {}x{} but stride {stride} of a {h}x{w} input implies {}x{}",
                        s.h,
                        s.w,
                        h / stride,
                        w / stride
                    ),
                ));
            }
            Ok(stride)
        };
        match &self.decoder {
            Decoder::Direct { reduce, head } => {
                let mut branches = Vec::with_capacity(taps.len());
                for (tap, conv) in taps.iter().zip(reduce) {
                    let src = stages[tap.index()];
                    let stride = check_stride(tape, *tap, src)?;
                    let y = conv.forward(self, tape, src, mode, true)?;
                    branches.push(if stride == 1 { y } else { tape.upsample(y, stride)? });
                }
                let cat = tape.concat(&branches)?;
                let logits = head.forward(self, tape, cat, mode)?;
                Ok((Some(cat), logits))
            }
            Decoder::Unet { reduce, fuse, head } => {
                let order = unet_order(&self.config);
                let mut reduced = Vec::with_capacity(taps.len());
                for (tap, conv) in taps.iter().zip(reduce) {
                    let src = stages[tap.index()];
                    check_stride(tape, *tap, src)?;
                    reduced.push(conv.forward(self, tape, src, mode, true)?);
                }
                let mut x = reduced[order[0]];
                for (&ti, conv) in order[1..].iter().zip(fuse) {
                    let skip = reduced[ti];
                    let ts = tape.value(skip).shape();
                    let xs = tape.value(x).shape();
                    if (xs.h, xs.w) != (ts.h, ts.w) {
                        x = tape.resize_bilinear(x, ts.h, ts.w)?;
                    }
                    let cat = tape.concat(&[x, skip])?;
                    x = conv.forward(self, tape, cat, mode, true)?;
                }
                let xs = tape.value(x).shape();
                if (xs.h, xs.w) != (h, w) {
                    x = tape.resize_bilinear(x, h, w)?;
                }
                let logits = head.forward(self, tape, x, mode)?;
                Ok((None, logits))
            }
        }
    }

    /// Records the full network on `tape`.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var, mode: Mode) -> Result<ForwardVars> {
        let s = tape.value(x).shape();
        let stages = self.encode(tape, x, mode)?;
        let (concat, logits) = self.decode(tape, &stages, (s.h, s.w), mode)?;
        Ok(ForwardVars {
            stages,
            concat,
            logits,
        })
    }

    /// Encoder outputs in eval mode.
    pub fn encoder_forward(&self, image: &Tensor) -> Result<FeaturePyramid> {
        let mut tape = Tape::new();
        let x = tape.input(image.clone());
        let stages = self.encode(&mut tape, x, Mode::Eval)?;
        let s = image.shape();
        Ok(FeaturePyramid {
            input_size: (s.h, s.w),
            maps: Stage::ALL
                .iter()
                .map(|&st| (st, tape.value(stages[st.index()]).clone()))
                .collect(),
        })
    }

    /// Decoder logits in eval mode for a precomputed pyramid.
    pub fn decoder_forward(&self, pyramid: &FeaturePyramid) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut vars = Vec::with_capacity(5);
        for st in Stage::ALL {
            let t = pyramid.get(st).ok_or_else(|| {
                Error::shape("decoder", format!("feature pyramid lacks stage {st}"))
            })?;
            vars.push(tape.input(t.clone()));
        }
        let stages: [Var; 5] = vars.try_into().expect("five stages");
        let (_, logits) = self.decode(&mut tape, &stages, pyramid.input_size, Mode::Eval)?;
        Ok(tape.value(logits).clone())
    }

    /// Eval-mode logits of shape `(n, 1, h, w)`.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.input(image.clone());
        let out = self.forward_tape(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(out.logits).clone())
    }
}

/// Tap indices ordered deepest stage first.
fn unet_order(config: &ModelConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..config.encoder_taps.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(config.encoder_taps[i]));
    order
}
