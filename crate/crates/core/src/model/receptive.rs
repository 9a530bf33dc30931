use super::{ModelConfig, Stage};
use crate::tensor::effective_field_of_view;

/// Analytic receptive field of a stage output along one axis.
///
/// Output index `i` sees input positions `i * jump - size / 2 ..= i * jump + size / 2`
/// (before clipping to the image). All layers of the encoder use centred
/// padding, so the field of output 0 is centred on input 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceptiveField {
    pub size: usize,
    pub jump: usize,
}

impl ReceptiveField {
    /// Inclusive input span of output index `i`, clipped to `[0, extent)`.
    pub fn span(&self, i: usize, extent: usize) -> (usize, usize) {
        let centre = (i * self.jump) as isize;
        let half = (self.size / 2) as isize;
        let lo = (centre - half).max(0) as usize;
        let hi = ((centre + half) as usize).min(extent.saturating_sub(1));
        (lo, hi)
    }

    fn layer(&mut self, k: usize, stride: usize, dilation: usize) {
        self.size += (effective_field_of_view(k, dilation) - 1) * self.jump;
        self.jump *= stride;
    }
}

/// Receptive field of `stage` along the longest (main) path of the encoder.
pub fn receptive_field(config: &ModelConfig, stage: Stage) -> ReceptiveField {
    let mut rf = ReceptiveField { size: 1, jump: 1 };
    rf.layer(7, 2, 1);
    if stage == Stage::R1 {
        return rf;
    }
    rf.layer(3, 2, 1);
    for (si, &blocks) in config.stage_blocks.iter().enumerate() {
        let st = Stage::ALL[si + 1];
        let (stride, dilation) = match st {
            Stage::R2 => (1, 1),
            Stage::R5 => (config.stage5_stride, config.stage5_dilation),
            _ => (2, 1),
        };
        for b in 0..blocks {
            rf.layer(3, if b == 0 { stride } else { 1 }, dilation);
        }
        if st == stage {
            break;
        }
    }
    rf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block_stages() {
        let cfg = ModelConfig {
            stage_blocks: [1, 1, 1, 1],
            ..ModelConfig::default()
        };
        assert_eq!(receptive_field(&cfg, Stage::R1), ReceptiveField { size: 7, jump: 2 });
        assert_eq!(receptive_field(&cfg, Stage::R2), ReceptiveField { size: 19, jump: 4 });
        assert_eq!(receptive_field(&cfg, Stage::R4), ReceptiveField { size: 43, jump: 16 });
        assert_eq!(receptive_field(&cfg, Stage::R5), ReceptiveField { size: 107, jump: 16 });
        let plain = ModelConfig {
            stage5_dilation: 1,
            ..cfg
        };
        assert_eq!(receptive_field(&plain, Stage::R5).size, 75);
    }

    #[test]
    fn span_clips() {
        let rf = ReceptiveField { size: 11, jump: 4 };
        assert_eq!(rf.span(0, 64), (0, 5));
        assert_eq!(rf.span(4, 64), (11, 21));
        assert_eq!(rf.span(15, 64), (55, 63));
    }
}
