use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Encoder stage whose output can feed the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    R1,
    R2,
    R3,
    R4,
    R5,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::R1, Stage::R2, Stage::R3, Stage::R4, Stage::R5];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.index() + 1)
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "R1" => Ok(Stage::R1),
            "R2" => Ok(Stage::R2),
            "R3" => Ok(Stage::R3),
            "R4" => Ok(Stage::R4),
            "R5" => Ok(Stage::R5),
            other => Err(Error::Config(format!("unknown encoder stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderStyle {
    /// Every tap is reduced, upsampled straight to input size and
    /// concatenated; no connections between the upsampling branches.
    Direct,
    /// Stepwise upsample-concat-conv over consecutive pyramid levels.
    UnetSymmetric,
}

impl fmt::Display for DecoderStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderStyle::Direct => "direct",
            DecoderStyle::UnetSymmetric => "unet_symmetric",
        })
    }
}

impl FromStr for DecoderStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "direct" => Ok(DecoderStyle::Direct),
            "unet_symmetric" | "unet" => Ok(DecoderStyle::UnetSymmetric),
            other => Err(Error::Config(format!("unknown decoder style {other:?}"))),
        }
    }
}

/// Architecture of the encoder/decoder network.
///
/// Channel counts are given at full width; `width_scale` divides every
/// stage, decoder and head width (never below 4) to obtain the small models
/// used for CPU training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stage_blocks: [usize; 4],
    /// Bottleneck output widths of stages 2 to 5.
    pub stage_channels: [usize; 4],
    pub width_scale: usize,
    pub stage5_dilation: usize,
    pub stage5_stride: usize,
    /// Reduced width per encoder tap, aligned with `encoder_taps`.
    pub decoder_dims: Vec<usize>,
    pub encoder_taps: Vec<Stage>,
    pub decoder_style: DecoderStyle,
    /// Width of the two 3x3 convolutions in the final block.
    pub head_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            stem_channels: 64,
            stage_blocks: [3, 4, 6, 3],
            stage_channels: [256, 512, 1024, 2048],
            width_scale: 1,
            stage5_dilation: 2,
            stage5_stride: 1,
            decoder_dims: vec![48, 48, 48, 256],
            encoder_taps: vec![Stage::R2, Stage::R3, Stage::R4, Stage::R5],
            decoder_style: DecoderStyle::Direct,
            head_channels: 256,
        }
    }
}

const MIN_WIDTH: usize = 4;

impl ModelConfig {
    /// Full-width configuration.
    pub fn full() -> Self {
        Self::default()
    }

    /// Default topology with every width divided by 8.
    pub fn toy() -> Self {
        ModelConfig {
            width_scale: 8,
            ..Self::default()
        }
    }

    /// The "original backbone" ablation: stage 5 strided, no dilation.
    pub fn with_original_backbone(mut self) -> Self {
        self.stage5_stride = 2;
        self.stage5_dilation = 1;
        self
    }

    pub fn scaled(&self, width: usize) -> usize {
        (width / self.width_scale.max(1)).max(MIN_WIDTH)
    }

    pub fn scaled_stem(&self) -> usize {
        self.scaled(self.stem_channels)
    }

    pub fn scaled_stage(&self, stage: Stage) -> usize {
        match stage {
            Stage::R1 => self.scaled_stem(),
            s => self.scaled(self.stage_channels[s.index() - 1]),
        }
    }

    pub fn scaled_decoder_dims(&self) -> Vec<usize> {
        self.decoder_dims.iter().map(|&d| self.scaled(d)).collect()
    }

    pub fn scaled_head(&self) -> usize {
        self.scaled(self.head_channels)
    }

    /// Width of the concatenated decoder block.
    pub fn concat_channels(&self) -> usize {
        self.scaled_decoder_dims().iter().sum()
    }

    /// Spatial stride of a stage output relative to the input.
    pub fn stage_stride(&self, stage: Stage) -> usize {
        match stage {
            Stage::R1 => 2,
            Stage::R2 => 4,
            Stage::R3 => 8,
            Stage::R4 => 16,
            Stage::R5 => 16 * self.stage5_stride,
        }
    }

    /// Input sides must be multiples of this.
    pub fn input_multiple(&self) -> usize {
        32
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.width_scale == 0 {
            return fail("width_scale must be at least 1".into());
        }
        if self.in_channels == 0 || self.stem_channels == 0 || self.head_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.stage_blocks.iter().any(|&b| b == 0) {
            return fail(format!("every stage needs a block, got {:?}", self.stage_blocks));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return fail(format!("stage widths must be positive, got {:?}", self.stage_channels));
        }
        if !matches!(self.stage5_stride, 1 | 2) {
            return fail(format!("stage5_stride must be 1 or 2, got {}", self.stage5_stride));
        }
        if self.stage5_dilation == 0 {
            return fail("stage5_dilation must be at least 1".into());
        }
        if self.stage5_stride == 2 && self.stage5_dilation != 1 {
            return fail(format!(
                "stage5_stride=2 requires stage5_dilation=1, got {}",
                self.stage5_dilation
            ));
        }
        if self.encoder_taps.is_empty() {
            return fail("at least one encoder tap is required".into());
        }
        let mut taps = self.encoder_taps.clone();
        taps.sort();
        taps.dedup();
        if taps.len() != self.encoder_taps.len() {
            return fail(format!("duplicate encoder taps {:?}", self.encoder_taps));
        }
        if self.decoder_dims.len() != self.encoder_taps.len() {
            return fail(format!(
                "{} decoder dims for {} encoder taps",
                self.decoder_dims.len(),
                self.encoder_taps.len()
            ));
        }
        if self.decoder_dims.iter().any(|&d| d == 0) {
            return fail("decoder dims must be positive".into());
        }
        Ok(())
    }

    /// Sets one field from its textual `key=value` form. Returns `false` for
    /// keys that are not model fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        match key.trim() {
            "in_channels" => self.in_channels = parse_usize(key, v)?,
            "stem_channels" => self.stem_channels = parse_usize(key, v)?,
            "stage_blocks" => self.stage_blocks = parse_array(key, v)?,
            "stage_channels" => self.stage_channels = parse_array(key, v)?,
            "width_scale" => self.width_scale = parse_usize(key, v)?,
            "stage5_dilation" => self.stage5_dilation = parse_usize(key, v)?,
            "stage5_stride" => self.stage5_stride = parse_usize(key, v)?,
            "decoder_dims" => self.decoder_dims = parse_list(key, v)?,
            "encoder_taps" => {
                self.encoder_taps = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(Stage::from_str)
                    .collect::<Result<_>>()?
            }
            "decoder_style" => self.decoder_style = v.parse()?,
            "head_channels" => self.head_channels = parse_usize(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses a `key=value` document; unknown keys are rejected.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in parse_kv(text)? {
            if !cfg.set(&k, &v)? {
                return Err(Error::Config(format!("unknown model config key {k:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let join = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let taps = self
            .encoder_taps
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "in_channels={}\nstem_channels={}\nstage_blocks={}\nstage_channels={}\nwidth_scale={}\n\
             stage5_dilation={}\nstage5_stride={}\ndecoder_dims={}\nencoder_taps={}\n\
             decoder_style={}\nhead_channels={}\n",
            self.in_channels,
            self.stem_channels,
            join(&self.stage_blocks),
            join(&self.stage_channels),
            self.width_scale,
            self.stage5_dilation,
            self.stage5_stride,
            join(&self.decoder_dims),
            taps,
            self.decoder_style,
            self.head_channels,
        )
    }
}

/// Splits a `key=value` document into pairs, skipping blank lines and `#`
/// comments.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_usize(key, s.trim()))
        .collect()
}

fn parse_array(key: &str, v: &str) -> Result<[usize; 4]> {
    let list = parse_list(key, v)?;
    list.try_into()
        .map_err(|l: Vec<usize>| Error::Config(format!("{key}: expected 4 values, got {}", l.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_reduction_dims_sum_to_400() {
        let cfg = ModelConfig::full();
        cfg.validate().unwrap();
        assert_eq!(cfg.concat_channels(), 400);
    }

    #[test]
    fn toy_widths() {
        let cfg = ModelConfig::toy();
        assert_eq!(cfg.scaled_stem(), 8);
        assert_eq!(cfg.scaled_stage(Stage::R5), 256);
        assert_eq!(cfg.scaled_decoder_dims(), vec![6, 6, 6, 32]);
        assert_eq!(ModelConfig { width_scale: 64, ..cfg }.scaled_stem(), 4);
    }

    #[test]
    fn strided_stage5_requires_rate_one() {
        let mut cfg = ModelConfig {
            stage5_stride: 2,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.stage5_dilation = 1;
        cfg.validate().unwrap();
        assert_eq!(cfg.stage_stride(Stage::R5), 32);
        cfg.stage5_stride = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tap_dim_alignment() {
        let cfg = ModelConfig {
            encoder_taps: vec![Stage::R3, Stage::R5],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            encoder_taps: vec![Stage::R3, Stage::R3],
            decoder_dims: vec![8, 8],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let cfg = ModelConfig {
            width_scale: 16,
            encoder_taps: vec![Stage::R1, Stage::R2, Stage::R3, Stage::R4, Stage::R5],
            decoder_dims: vec![16, 48, 48, 48, 256],
            decoder_style: DecoderStyle::UnetSymmetric,
            ..ModelConfig::default()
        };
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        let parsed = ModelConfig::from_kv("# toy\nwidth_scale = 8\n\nstage5_dilation=1\n").unwrap();
        assert_eq!(parsed.width_scale, 8);
        assert_eq!(parsed.stage5_dilation, 1);
        assert!(ModelConfig::from_kv("bogus=1").is_err());
        assert!(ModelConfig::from_kv("width_scale").is_err());
        assert!(ModelConfig::from_kv("stage_blocks=1,2").is_err());
    }
}
