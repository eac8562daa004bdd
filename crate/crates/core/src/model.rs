//! The full three-branch saliency network: a spatial excitation branch, a
//! temporal excitation branch driven by optical flow, and a video branch that
//! fuses bi-directional ConvLSTM states under spatial/temporal excitation.

use crate::backbone::{
    bidirectional_pass, ConvLstm, Decoder, DecoderConfig, DilatedEncoder, EncoderConfig,
};
use crate::data::VideoClip;
use crate::error::{Error, Result};
use crate::excitation::{excite, make_excitation_map, downsample_map};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Graph, Var};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Reading of the bi-directional fusion: channel concatenation of the
/// spatially- and temporally-excited hidden states, or their sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FuseMode {
    #[default]
    Concat,
    Sum,
}

/// How excitation maps enter the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapMode {
    /// Curriculum maps built from ground truth and complementary predictions.
    #[default]
    Normal,
    /// Every excitation map is replaced by an all-ones map (the ablation
    /// baseline: excitation reduces to identity).
    Ones,
    /// Excitation calls are skipped altogether; used to verify the identity
    /// equivalence of `Ones`.
    Bypass,
}

/// Which maps online refinement replaces with the previous video prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OnlineSource {
    #[default]
    Both,
    SpatialOnly,
    TemporalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// (height, width) every clip is preprocessed to.
    pub input_size: (usize, usize),
    pub base_channels: usize,
    pub level_channels: usize,
    pub dilation_levels: usize,
    pub encoder_stride: usize,
    pub decoder_channels: [usize; 4],
    /// ConvLSTM hidden width; 0 means "equal to the encoder output width".
    pub lstm_hidden: usize,
    pub fuse: FuseMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: (64, 64),
            base_channels: 64,
            level_channels: 16,
            dilation_levels: 4,
            encoder_stride: 4,
            decoder_channels: [48, 32, 16, 8],
            lstm_hidden: 0,
            fuse: FuseMode::Concat,
        }
    }
}

impl ModelConfig {
    pub fn encoder_out_channels(&self) -> usize {
        self.base_channels + self.dilation_levels * self.level_channels
    }

    pub fn lstm_hidden_channels(&self) -> usize {
        if self.lstm_hidden == 0 {
            self.encoder_out_channels()
        } else {
            self.lstm_hidden
        }
    }

    fn encoder_cfg(&self, in_channels: usize) -> EncoderConfig {
        EncoderConfig {
            in_channels,
            base_channels: self.base_channels,
            level_channels: self.level_channels,
            dilation_levels: self.dilation_levels,
            stride: self.encoder_stride,
        }
    }

    /// Encoder skip indices feeding the decoder's mid (2x latent) and full
    /// (4x latent) stages, where they exist for this stride.
    fn skip_indices(&self) -> (Option<usize>, Option<usize>) {
        let n = self.encoder_stride.trailing_zeros() as usize;
        let mid = n.checked_sub(1);
        let full = n.checked_sub(2);
        (mid, full)
    }

    fn decoder_cfg(&self, in_channels: usize) -> DecoderConfig {
        let (mid, full) = self.skip_indices();
        DecoderConfig {
            in_channels,
            stage_channels: self.decoder_channels,
            skip_mid: mid.map(|_| self.base_channels),
            skip_full: full.map(|_| self.base_channels),
        }
    }

    pub fn latent_size(&self) -> (usize, usize) {
        (
            self.input_size.0 / self.encoder_stride,
            self.input_size.1 / self.encoder_stride,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.encoder_stride.is_power_of_two()
            && self.input_size.0 % self.encoder_stride == 0
            && self.input_size.1 % self.encoder_stride == 0
            && self.dilation_levels >= 1
            && self.base_channels >= 1
            && self.level_channels >= 1
            && self.decoder_channels.iter().all(|&c| c >= 1);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid model config: {self:?}")))
        }
    }
}

/// The five learnable excitation rates (raw, pre-logistic).
pub struct ExcitationRates {
    pub spatial_to_temporal: ParamId,
    pub fwd_spatial_to_video: ParamId,
    pub fwd_temporal_to_video: ParamId,
    pub bwd_spatial_to_video: ParamId,
    pub bwd_temporal_to_video: ParamId,
}

impl ExcitationRates {
    pub fn all(&self) -> [ParamId; 5] {
        [
            self.spatial_to_temporal,
            self.fwd_spatial_to_video,
            self.fwd_temporal_to_video,
            self.bwd_spatial_to_video,
            self.bwd_temporal_to_video,
        ]
    }
}

/// Per-frame predictions and excitation maps, as plain arrays.
#[derive(Debug, Clone)]
pub struct FrameOutputs {
    pub spatial: Array2<f64>,
    pub temporal: Array2<f64>,
    pub video: Array2<f64>,
    pub spatial_excitation: Array2<f64>,
    pub temporal_excitation: Array2<f64>,
}

/// Per-frame predictions kept on the tape for training.
pub struct FrameVars {
    pub spatial: Var,
    pub temporal: Var,
    pub video: Var,
    pub spatial_excitation: Array2<f64>,
    pub temporal_excitation: Array2<f64>,
}

/// Options of one forward invocation.
#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    pub alpha: f64,
    pub use_gt: bool,
    pub excitation: MapMode,
    /// Online refinement: per-frame replacement maps and which targets they
    /// override.
    pub replace: Option<(Vec<Array2<f64>>, OnlineSource)>,
}

impl ForwardOptions {
    pub fn inference() -> Self {
        ForwardOptions {
            alpha: 0.0,
            use_gt: false,
            ..ForwardOptions::default()
        }
    }
}

pub struct ExcitationNet {
    cfg: ModelConfig,
    pub(crate) spatial_encoder: DilatedEncoder,
    pub(crate) spatial_decoder: Decoder,
    pub(crate) temporal_encoder: DilatedEncoder,
    pub(crate) temporal_decoder: Decoder,
    pub(crate) video_encoder: DilatedEncoder,
    pub(crate) lstm_fwd: ConvLstm,
    pub(crate) lstm_bwd: ConvLstm,
    pub(crate) saliency_decoder: Decoder,
    pub rates: ExcitationRates,
}

impl ExcitationNet {
    /// Builds the network, registering every parameter in `store`. The three
    /// encoders (and three decoders) share structure but hold distinct
    /// parameters.
    pub fn new(store: &mut ParamStore, seed: u64, cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_out = cfg.encoder_out_channels();
        let hidden = cfg.lstm_hidden_channels();
        let fused = match cfg.fuse {
            FuseMode::Concat => 4 * hidden,
            FuseMode::Sum => 2 * hidden,
        };
        let spatial_encoder = DilatedEncoder::new(store, &mut rng, "spatial.enc", cfg.encoder_cfg(3));
        let spatial_decoder = Decoder::new(store, &mut rng, "spatial.dec", cfg.decoder_cfg(enc_out));
        let temporal_encoder = DilatedEncoder::new(store, &mut rng, "temporal.enc", cfg.encoder_cfg(2));
        let temporal_decoder = Decoder::new(store, &mut rng, "temporal.dec", cfg.decoder_cfg(enc_out));
        let video_encoder = DilatedEncoder::new(store, &mut rng, "video.enc", cfg.encoder_cfg(3));
        let lstm_fwd = ConvLstm::new(store, &mut rng, "video.lstm_fwd", enc_out, hidden);
        let lstm_bwd = ConvLstm::new(store, &mut rng, "video.lstm_bwd", enc_out, hidden);
        let saliency_decoder = Decoder::new(store, &mut rng, "video.dec", cfg.decoder_cfg(fused));
        let raw0 = || ArrayD::zeros(IxDyn(&[]));
        let rates = ExcitationRates {
            spatial_to_temporal: store.add("rate.spatial_to_temporal", raw0()),
            fwd_spatial_to_video: store.add("rate.fwd_spatial_to_video", raw0()),
            fwd_temporal_to_video: store.add("rate.fwd_temporal_to_video", raw0()),
            bwd_spatial_to_video: store.add("rate.bwd_spatial_to_video", raw0()),
            bwd_temporal_to_video: store.add("rate.bwd_temporal_to_video", raw0()),
        };
        Ok(ExcitationNet {
            cfg,
            spatial_encoder,
            spatial_decoder,
            temporal_encoder,
            temporal_decoder,
            video_encoder,
            lstm_fwd,
            lstm_bwd,
            saliency_decoder,
            rates,
        })
    }

    pub fn config(&self) -> ModelConfig {
        self.cfg
    }

    fn pick_skips<'a>(&self, skips: &'a [Var]) -> (Option<Var>, Option<Var>) {
        let (mid, full) = self.cfg.skip_indices();
        (
            mid.map(|i| skips[i]),
            full.map(|i| skips[i]),
        )
    }

    /// Builds the map fed into an excitation site, honoring overrides.
    fn effective_map(&self, constructed: &Array2<f64>, mode: MapMode) -> Array2<f64> {
        match mode {
            MapMode::Ones => Array2::ones(constructed.dim()),
            _ => constructed.clone(),
        }
    }

    /// Applies excitation to a latent tensor unless bypassed.
    fn excite_latent(
        &self,
        g: &mut Graph,
        m: Var,
        map_full: &Array2<f64>,
        rate: ParamId,
        bound: &Bound,
        mode: MapMode,
    ) -> Result<Var> {
        if mode == MapMode::Bypass {
            return Ok(m);
        }
        let sh = g.shape(m).to_vec();
        let low = downsample_map(map_full, (sh[1], sh[2]))?;
        let e = g.constant(low.into_dyn());
        let raw = bound.var(rate);
        let beta = g.sigmoid(raw);
        excite(g, m, e, beta)
    }

    /// Spatial excitation branch: frame -> (S^s, E^s).
    pub fn spatial_branch(
        &self,
        g: &mut Graph,
        bound: &Bound,
        frame: Var,
        gt: Option<&Array2<f64>>,
        alpha: f64,
        mode: MapMode,
    ) -> Result<(Var, Array2<f64>)> {
        let enc = self.spatial_encoder.forward(g, bound, frame)?;
        let (mid, full) = self.pick_skips(&enc.skips);
        let map = self
            .spatial_decoder
            .forward(g, bound, enc.features, mid, full, self.cfg.input_size)?;
        let s_val = map_to_array2(g, map);
        let excitation = match mode {
            MapMode::Normal => make_excitation_map(gt, &s_val, alpha)?,
            _ => self.effective_map(&s_val, mode),
        };
        Ok((map, excitation))
    }

    /// Excite a precomputed temporal latent with the spatial map and decode it.
    pub(crate) fn temporal_decode(
        &self,
        g: &mut Graph,
        bound: &Bound,
        latent: Var,
        skips: &[Var],
        spatial_map: &Array2<f64>,
        mode: MapMode,
    ) -> Result<Var> {
        let excited = self.excite_latent(
            g,
            latent,
            spatial_map,
            self.rates.spatial_to_temporal,
            bound,
            mode,
        )?;
        let (mid, full) = self.pick_skips(skips);
        self.temporal_decoder
            .forward(g, bound, excited, mid, full, self.cfg.input_size)
    }

    /// Temporal excitation branch: (flow, E^s) -> (S^t, E^t). The spatial map
    /// excites the temporal latent; `E^s` enters as a constant.
    pub fn temporal_branch(
        &self,
        g: &mut Graph,
        bound: &Bound,
        flow: Var,
        spatial_map: &Array2<f64>,
        gt: Option<&Array2<f64>>,
        alpha: f64,
        mode: MapMode,
    ) -> Result<(Var, Array2<f64>)> {
        let enc = self.temporal_encoder.forward(g, bound, flow)?;
        let map = self.temporal_decode(g, bound, enc.features, &enc.skips, spatial_map, mode)?;
        let s_val = map_to_array2(g, map);
        let excitation = match mode {
            MapMode::Normal => make_excitation_map(gt, &s_val, alpha)?,
            _ => self.effective_map(&s_val, mode),
        };
        Ok((map, excitation))
    }

    /// Fuses one direction's hidden state under spatial/temporal excitation.
    fn fuse_direction(
        &self,
        g: &mut Graph,
        bound: &Bound,
        hidden: Var,
        es: &Array2<f64>,
        et: &Array2<f64>,
        spatial_rate: ParamId,
        temporal_rate: ParamId,
        mode: MapMode,
    ) -> Result<Var> {
        let a = self.excite_latent(g, hidden, es, spatial_rate, bound, mode)?;
        let b = self.excite_latent(g, hidden, et, temporal_rate, bound, mode)?;
        Ok(match self.cfg.fuse {
            FuseMode::Concat => g.concat_c(&[a, b]),
            FuseMode::Sum => g.add(a, b),
        })
    }

    /// Video saliency branch over a whole clip: per-frame encoder features run
    /// through the bi-directional ConvLSTM; the returned hidden states are
    /// excited post-hoc by the per-frame maps and decoded.
    pub fn video_branch(
        &self,
        g: &mut Graph,
        bound: &Bound,
        frames: &[Var],
        spatial_maps: &[Array2<f64>],
        temporal_maps: &[Array2<f64>],
        mode: MapMode,
    ) -> Result<Vec<Var>> {
        if frames.len() != spatial_maps.len() || frames.len() != temporal_maps.len() {
            return Err(Error::InvalidArgument(format!(
                "video branch: {} frames vs {}/{} excitation maps",
                frames.len(),
                spatial_maps.len(),
                temporal_maps.len()
            )));
        }
        let mut feats = Vec::with_capacity(frames.len());
        let mut skips = Vec::with_capacity(frames.len());
        for &f in frames {
            let enc = self.video_encoder.forward(g, bound, f)?;
            feats.push(enc.features);
            skips.push(enc.skips);
        }
        let (hf, hb) = bidirectional_pass(g, bound, &self.lstm_fwd, &self.lstm_bwd, &feats)?;
        let mut out = Vec::with_capacity(frames.len());
        for n in 0..frames.len() {
            let map = self.video_decode(
                g,
                bound,
                hf[n],
                hb[n],
                &skips[n],
                &spatial_maps[n],
                &temporal_maps[n],
                mode,
            )?;
            out.push(map);
        }
        Ok(out)
    }

    /// Excite and fuse one frame's bi-directional hidden states, then decode.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn video_decode(
        &self,
        g: &mut Graph,
        bound: &Bound,
        hidden_fwd: Var,
        hidden_bwd: Var,
        skips: &[Var],
        es: &Array2<f64>,
        et: &Array2<f64>,
        mode: MapMode,
    ) -> Result<Var> {
        let fwd = self.fuse_direction(
            g,
            bound,
            hidden_fwd,
            es,
            et,
            self.rates.fwd_spatial_to_video,
            self.rates.fwd_temporal_to_video,
            mode,
        )?;
        let bwd = self.fuse_direction(
            g,
            bound,
            hidden_bwd,
            es,
            et,
            self.rates.bwd_spatial_to_video,
            self.rates.bwd_temporal_to_video,
            mode,
        )?;
        let fused = g.concat_c(&[fwd, bwd]);
        let (mid, full) = self.pick_skips(skips);
        self.saliency_decoder
            .forward(g, bound, fused, mid, full, self.cfg.input_size)
    }

    /// Full per-clip forward pass: spatial branch per frame, temporal branch
    /// per frame (frame 0 consumes the zero flow field), then the video
    /// branch over the clip.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        clip: &VideoClip,
        opts: &ForwardOptions,
    ) -> Result<Vec<FrameVars>> {
        if clip.size() != self.cfg.input_size {
            return Err(Error::shape(
                "forward clip",
                format!("{:?}", self.cfg.input_size),
                format!("{:?}", clip.size()),
            ));
        }
        if opts.use_gt && opts.alpha > 0.0 && clip.masks.is_none() {
            return Err(Error::MissingGroundTruth { alpha: opts.alpha });
        }
        if let Some((maps, _)) = &opts.replace {
            if maps.len() != clip.len() {
                return Err(Error::InvalidArgument(format!(
                    "online maps: {} for a {}-frame clip",
                    maps.len(),
                    clip.len()
                )));
            }
        }
        let n = clip.len();
        let mut frames = Vec::with_capacity(n);
        let mut spatial_vars = Vec::with_capacity(n);
        let mut temporal_vars = Vec::with_capacity(n);
        let mut es_used = Vec::with_capacity(n);
        let mut et_used = Vec::with_capacity(n);
        let mut es_out = Vec::with_capacity(n);
        let mut et_out = Vec::with_capacity(n);

        for i in 0..n {
            let frame = g.constant(clip.frame_chw(i).into_dyn());
            frames.push(frame);
            let gt = if opts.use_gt { clip.mask(i) } else { None };
            let (ss, es) = self.spatial_branch(g, bound, frame, gt.as_ref(), opts.alpha, opts.excitation)?;
            let es_eff = match &opts.replace {
                Some((maps, src)) if matches!(src, OnlineSource::Both | OnlineSource::SpatialOnly) => {
                    maps[i].clone()
                }
                _ => es.clone(),
            };
            let flow = g.constant(clip.flow_chw(i).into_dyn());
            let (st, et) = self.temporal_branch(
                g,
                bound,
                flow,
                &es_eff,
                gt.as_ref(),
                opts.alpha,
                opts.excitation,
            )?;
            let et_eff = match &opts.replace {
                Some((maps, src)) if matches!(src, OnlineSource::Both | OnlineSource::TemporalOnly) => {
                    maps[i].clone()
                }
                _ => et.clone(),
            };
            spatial_vars.push(ss);
            temporal_vars.push(st);
            es_out.push(es);
            et_out.push(et);
            es_used.push(es_eff);
            et_used.push(et_eff);
        }

        let video_vars = self.video_branch(g, bound, &frames, &es_used, &et_used, opts.excitation)?;

        Ok((0..n)
            .map(|i| FrameVars {
                spatial: spatial_vars[i],
                temporal: temporal_vars[i],
                video: video_vars[i],
                spatial_excitation: es_out[i].clone(),
                temporal_excitation: et_out[i].clone(),
            })
            .collect())
    }

    /// Gradient-free forward pass returning plain arrays.
    pub fn forward_arrays(
        &self,
        store: &ParamStore,
        clip: &VideoClip,
        opts: &ForwardOptions,
    ) -> Result<Vec<FrameOutputs>> {
        let mut g = Graph::new();
        let bound = Bound::bind(&mut g, store, false);
        let vars = self.forward(&mut g, &bound, clip, opts)?;
        Ok(vars
            .into_iter()
            .map(|fv| FrameOutputs {
                spatial: map_to_array2(&g, fv.spatial),
                temporal: map_to_array2(&g, fv.temporal),
                video: map_to_array2(&g, fv.video),
                spatial_excitation: fv.spatial_excitation,
                temporal_excitation: fv.temporal_excitation,
            })
            .collect())
    }
}

pub(crate) fn map_to_array2(g: &Graph, v: Var) -> Array2<f64> {
    let sh = g.shape(v).to_vec();
    assert_eq!(sh.len(), 2, "expected a rank-2 map");
    Array2::from_shape_vec((sh[0], sh[1]), g.value(v).as_slice().unwrap().to_vec()).unwrap()
}
