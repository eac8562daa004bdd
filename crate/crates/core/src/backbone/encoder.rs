//! Dilated residual encoder.
//!
//! A 3x3 stride-1 stem (no pooling) extracts full-resolution features;
//! residual stages reduce resolution by the overall stride; a pyramid of
//! dilated 3x3 convolutions with rates 2, 4, ..., 2^K runs on the reduced
//! features and the outputs are channel-concatenated with them.

use super::{ConvBlock, ConvLayer, NormLayer};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Graph, Var};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    /// Width `c` of the stem and residual stages.
    pub base_channels: usize,
    /// Width `c'` of each dilated level.
    pub level_channels: usize,
    /// Number of dilated levels `K`; level `k` uses dilation `2^k`.
    pub dilation_levels: usize,
    /// Overall resolution reduction `d`; must be a power of two.
    pub stride: usize,
}

impl EncoderConfig {
    /// Channel count of the concatenated output: `c + K * c'`.
    pub fn out_channels(&self) -> usize {
        self.base_channels + self.dilation_levels * self.level_channels
    }

    pub fn num_stages(&self) -> usize {
        self.stride.trailing_zeros() as usize
    }
}

struct ResBlock {
    block1: ConvBlock,
    conv2: ConvLayer,
    norm2: NormLayer,
    shortcut: Option<(ConvLayer, NormLayer)>,
}

impl ResBlock {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, channels: usize, stride: usize) -> Self {
        let block1 = ConvBlock::new(store, rng, &format!("{name}.b1"), channels, channels, 3, stride, 1, 1);
        let conv2 = ConvLayer::new(store, rng, &format!("{name}.conv2"), channels, channels, 3, 1, 1, 1);
        let norm2 = NormLayer::new(store, &format!("{name}.norm2"), channels);
        let shortcut = if stride != 1 {
            Some((
                ConvLayer::new(store, rng, &format!("{name}.short.conv"), channels, channels, 1, stride, 0, 1),
                NormLayer::new(store, &format!("{name}.short.norm"), channels),
            ))
        } else {
            None
        };
        ResBlock {
            block1,
            conv2,
            norm2,
            shortcut,
        }
    }

    fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Var {
        let y = self.block1.forward(g, bound, x);
        let y = self.conv2.forward(g, bound, y);
        let y = self.norm2.forward(g, bound, y);
        let s = match &self.shortcut {
            Some((conv, norm)) => {
                let s = conv.forward(g, bound, x);
                norm.forward(g, bound, s)
            }
            None => x,
        };
        let sum = g.add(y, s);
        g.relu(sum)
    }
}

/// Encoder output: concatenated features plus the per-resolution skip taps.
pub struct EncoderOut {
    /// `[c + K*c', H/d, W/d]`
    pub features: Var,
    /// Stage outputs from full resolution down: `skips[i]` has stride `2^i`,
    /// `skips[0]` being the stem output. All carry `c` channels.
    pub skips: Vec<Var>,
}

pub struct DilatedEncoder {
    cfg: EncoderConfig,
    stem: ConvBlock,
    stages: Vec<ResBlock>,
    levels: Vec<ConvBlock>,
}

impl DilatedEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: EncoderConfig) -> Self {
        assert!(cfg.stride.is_power_of_two(), "encoder stride must be a power of two");
        assert!(cfg.dilation_levels >= 1, "at least one dilated level required");
        let stem = ConvBlock::new(store, rng, &format!("{name}.stem"), cfg.in_channels, cfg.base_channels, 3, 1, 1, 1);
        let stages = (0..cfg.num_stages())
            .map(|i| ResBlock::new(store, rng, &format!("{name}.stage{i}"), cfg.base_channels, 2))
            .collect();
        let levels = (1..=cfg.dilation_levels)
            .map(|k| {
                let d = 1usize << k;
                ConvBlock::new(
                    store,
                    rng,
                    &format!("{name}.dilated{k}"),
                    cfg.base_channels,
                    cfg.level_channels,
                    3,
                    1,
                    d,
                    d,
                )
            })
            .collect();
        DilatedEncoder {
            cfg,
            stem,
            stages,
            levels,
        }
    }

    pub fn config(&self) -> EncoderConfig {
        self.cfg
    }

    /// Dilation rates used by the level pyramid.
    pub fn dilation_rates(&self) -> Vec<usize> {
        (1..=self.cfg.dilation_levels).map(|k| 1usize << k).collect()
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<EncoderOut> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[0] != self.cfg.in_channels {
            return Err(Error::shape(
                "encoder input",
                format!("[{},H,W]", self.cfg.in_channels),
                format!("{shape:?}"),
            ));
        }
        if shape[1] % self.cfg.stride != 0 || shape[2] % self.cfg.stride != 0 {
            return Err(Error::InvalidArgument(format!(
                "encoder input {}x{} not divisible by stride {}",
                shape[1], shape[2], self.cfg.stride
            )));
        }
        let mut cur = self.stem.forward(g, bound, x);
        let mut skips = vec![cur];
        for stage in &self.stages {
            cur = stage.forward(g, bound, cur);
            skips.push(cur);
        }
        let mut parts = vec![cur];
        for level in &self.levels {
            parts.push(level.forward(g, bound, cur));
        }
        let features = g.concat_c(&parts);
        Ok(EncoderOut { features, skips })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::SeedableRng;

    fn encoder(cfg: EncoderConfig) -> (ParamStore, DilatedEncoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = DilatedEncoder::new(&mut store, &mut rng, "enc", cfg);
        (store, enc)
    }

    #[test]
    fn output_channels_follow_concatenation_arithmetic() {
        let cfg = EncoderConfig {
            in_channels: 3,
            base_channels: 64,
            level_channels: 16,
            dilation_levels: 4,
            stride: 4,
        };
        assert_eq!(cfg.out_channels(), 128);
        let (store, enc) = encoder(cfg);
        let mut g = Graph::new();
        let bound = crate::params::Bound::bind(&mut g, &store, false);
        let x = g.constant(ArrayD::zeros(IxDyn(&[3, 16, 16])));
        let out = enc.forward(&mut g, &bound, x).unwrap();
        assert_eq!(g.shape(out.features), &[128, 4, 4]);
    }

    #[test]
    fn dilation_rates_are_powers_of_two() {
        let cfg = EncoderConfig {
            in_channels: 3,
            base_channels: 8,
            level_channels: 4,
            dilation_levels: 4,
            stride: 4,
        };
        let (_, enc) = encoder(cfg);
        assert_eq!(enc.dilation_rates(), vec![2, 4, 8, 16]);
    }

    #[test]
    fn indivisible_input_dims_error() {
        let cfg = EncoderConfig {
            in_channels: 3,
            base_channels: 8,
            level_channels: 4,
            dilation_levels: 2,
            stride: 4,
        };
        let (store, enc) = encoder(cfg);
        let mut g = Graph::new();
        let bound = crate::params::Bound::bind(&mut g, &store, false);
        let x = g.constant(ArrayD::zeros(IxDyn(&[3, 18, 16])));
        assert!(enc.forward(&mut g, &bound, x).is_err());
    }

    #[test]
    fn skips_cover_every_stride() {
        let cfg = EncoderConfig {
            in_channels: 2,
            base_channels: 6,
            level_channels: 3,
            dilation_levels: 2,
            stride: 4,
        };
        let (store, enc) = encoder(cfg);
        let mut g = Graph::new();
        let bound = crate::params::Bound::bind(&mut g, &store, false);
        let x = g.constant(ArrayD::zeros(IxDyn(&[2, 32, 32])));
        let out = enc.forward(&mut g, &bound, x).unwrap();
        let dims: Vec<_> = out.skips.iter().map(|&s| g.shape(s).to_vec()).collect();
        assert_eq!(dims, vec![vec![6, 32, 32], vec![6, 16, 16], vec![6, 8, 8]]);
    }
}
