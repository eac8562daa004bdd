//! Four-stage decoder. Each stage is three convolution/normalization/ReLU
//! blocks; two x2 bilinear upsamplings sit between stages, encoder skips are
//! concatenated where resolutions match, and a final 1x1 convolution with a
//! logistic activation emits a full-resolution single-channel map in [0,1].

use super::{ConvBlock, ConvLayer};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Graph, Var};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub in_channels: usize,
    /// Output width of each of the four stages.
    pub stage_channels: [usize; 4],
    /// Channels of the skip concatenated into stage 3 (at 2x the latent
    /// resolution), if wired.
    pub skip_mid: Option<usize>,
    /// Channels of the skip concatenated into stage 4 (at 4x the latent
    /// resolution), if wired.
    pub skip_full: Option<usize>,
}

struct DecStage {
    blocks: [ConvBlock; 3],
}

impl DecStage {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, in_ch: usize, out_ch: usize) -> Self {
        let b0 = ConvBlock::new(store, rng, &format!("{name}.0"), in_ch, out_ch, 3, 1, 1, 1);
        let b1 = ConvBlock::new(store, rng, &format!("{name}.1"), out_ch, out_ch, 3, 1, 1, 1);
        let b2 = ConvBlock::new(store, rng, &format!("{name}.2"), out_ch, out_ch, 3, 1, 1, 1);
        DecStage { blocks: [b0, b1, b2] }
    }

    fn forward(&self, g: &mut Graph, bound: &Bound, mut x: Var) -> Var {
        for b in &self.blocks {
            x = b.forward(g, bound, x);
        }
        x
    }
}

pub struct Decoder {
    cfg: DecoderConfig,
    stages: [DecStage; 4],
    head: ConvLayer,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: DecoderConfig) -> Self {
        let [c1, c2, c3, c4] = cfg.stage_channels;
        let s1 = DecStage::new(store, rng, &format!("{name}.stage1"), cfg.in_channels, c1);
        let s2 = DecStage::new(store, rng, &format!("{name}.stage2"), c1, c2);
        let s3 = DecStage::new(store, rng, &format!("{name}.stage3"), c2 + cfg.skip_mid.unwrap_or(0), c3);
        let s4 = DecStage::new(store, rng, &format!("{name}.stage4"), c3 + cfg.skip_full.unwrap_or(0), c4);
        let head = ConvLayer::new(store, rng, &format!("{name}.head"), c4, 1, 1, 1, 0, 1);
        Decoder {
            cfg,
            stages: [s1, s2, s3, s4],
            head,
        }
    }

    pub fn config(&self) -> DecoderConfig {
        self.cfg
    }

    /// Decodes latent features into a `[H,W]` saliency map in `[0,1]`.
    ///
    /// `skip_mid`/`skip_full` must sit at exactly 2x and 4x the latent
    /// resolution; `out_size` is the target full resolution.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        features: Var,
        skip_mid: Option<Var>,
        skip_full: Option<Var>,
        out_size: (usize, usize),
    ) -> Result<Var> {
        let fsh = g.shape(features).to_vec();
        if fsh.len() != 3 || fsh[0] != self.cfg.in_channels {
            return Err(Error::shape(
                "decoder input",
                format!("[{},h,w]", self.cfg.in_channels),
                format!("{fsh:?}"),
            ));
        }
        let (lh, lw) = (fsh[1], fsh[2]);
        let x = self.stages[0].forward(g, bound, features);
        let x = self.stages[1].forward(g, bound, x);

        let mut x = g.resize_bilinear(x, lh * 2, lw * 2);
        match (self.cfg.skip_mid, skip_mid) {
            (Some(c), Some(s)) => {
                let ssh = g.shape(s).to_vec();
                if ssh != vec![c, lh * 2, lw * 2] {
                    return Err(Error::shape(
                        "decoder mid skip",
                        format!("[{c},{},{}]", lh * 2, lw * 2),
                        format!("{ssh:?}"),
                    ));
                }
                x = g.concat_c(&[x, s]);
            }
            (None, None) => {}
            _ => {
                return Err(Error::InvalidArgument(
                    "decoder mid-skip presence does not match its configuration".into(),
                ))
            }
        }
        let x = self.stages[2].forward(g, bound, x);

        let mut x = g.resize_bilinear(x, lh * 4, lw * 4);
        match (self.cfg.skip_full, skip_full) {
            (Some(c), Some(s)) => {
                let ssh = g.shape(s).to_vec();
                if ssh != vec![c, lh * 4, lw * 4] {
                    return Err(Error::shape(
                        "decoder full skip",
                        format!("[{c},{},{}]", lh * 4, lw * 4),
                        format!("{ssh:?}"),
                    ));
                }
                x = g.concat_c(&[x, s]);
            }
            (None, None) => {}
            _ => {
                return Err(Error::InvalidArgument(
                    "decoder full-skip presence does not match its configuration".into(),
                ))
            }
        }
        let x = self.stages[3].forward(g, bound, x);

        let logits = self.head.forward(g, bound, x);
        let map = g.sigmoid(logits);
        let map = g.reshape(map, &[lh * 4, lw * 4]);
        Ok(g.resize_bilinear(map, out_size.0, out_size.1))
    }
}
