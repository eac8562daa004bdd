//! Plain-text `key = value` configuration files shared by dataset generation
//! and training. Lines starting with `#` are comments; unknown keys are
//! rejected. The `TENET_SEED` environment variable overrides the configured
//! seed.

use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::model::{FuseMode, ModelConfig, OnlineSource};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV_VAR: &str = "TENET_SEED";

/// Training-harness configuration; field names double as config-file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: u32,
    pub batch_size: usize,
    pub clip_length: usize,
    pub frame_stride: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub excitation: bool,
    pub spatial_data: PathBuf,
    pub temporal_data: PathBuf,
    pub video_data: PathBuf,
    pub image_size: (usize, usize),
    pub base_channels: usize,
    pub level_channels: usize,
    pub dilation_levels: usize,
    pub encoder_stride: usize,
    pub decoder_channels: [usize; 4],
    pub lstm_hidden: usize,
    pub fuse_mode: FuseMode,
    pub online_source: OnlineSource,
    pub online_iters: usize,
    pub checkpoint_every: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 15,
            batch_size: 1,
            clip_length: 4,
            frame_stride: 1,
            lr_init: 5e-4,
            lr_final: 1e-6,
            momentum: 0.9,
            weight_decay: 5e-4,
            excitation: true,
            spatial_data: PathBuf::new(),
            temporal_data: PathBuf::new(),
            video_data: PathBuf::new(),
            image_size: (64, 64),
            base_channels: 64,
            level_channels: 16,
            dilation_levels: 4,
            encoder_stride: 4,
            decoder_channels: [48, 32, 16, 8],
            lstm_hidden: 0,
            fuse_mode: FuseMode::Concat,
            online_source: OnlineSource::Both,
            online_iters: 20,
            checkpoint_every: 5,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_size: self.image_size,
            base_channels: self.base_channels,
            level_channels: self.level_channels,
            dilation_levels: self.dilation_levels,
            encoder_stride: self.encoder_stride,
            decoder_channels: self.decoder_channels,
            lstm_hidden: self.lstm_hidden,
            fuse: self.fuse_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_final > self.lr_init {
            return Err(Error::InvalidArgument(format!(
                "lr_final {} exceeds lr_init {}",
                self.lr_final, self.lr_init
            )));
        }
        if self.epochs < 1 || self.batch_size < 1 || self.clip_length < 1 || self.frame_stride < 1 {
            return Err(Error::InvalidArgument(
                "epochs, batch_size, clip_length, and frame_stride must be >= 1".into(),
            ));
        }
        self.model_config().validate()
    }
}

/// All keys a config file may contain (training plus dataset generation).
const TRAIN_KEYS: &[&str] = &[
    "seed",
    "epochs",
    "batch_size",
    "clip_length",
    "frame_stride",
    "lr_init",
    "lr_final",
    "momentum",
    "weight_decay",
    "excitation",
    "spatial_data",
    "temporal_data",
    "video_data",
    "image_size",
    "base_channels",
    "level_channels",
    "dilation_levels",
    "encoder_stride",
    "decoder_channels",
    "lstm_hidden",
    "fuse_mode",
    "online_source",
    "online_iters",
    "checkpoint_every",
];

const DATASET_KEYS: &[&str] = &[
    "seed",
    "num_clips",
    "frames_per_clip",
    "image_size",
    "moving_shapes",
    "distractor_shapes",
    "velocity_range",
    "target_foreground_fraction",
];

/// Parsed `key = value` file.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    path: PathBuf,
    values: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::BadConfig {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    reason: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim().to_string();
            if !TRAIN_KEYS.contains(&key.as_str()) && !DATASET_KEYS.contains(&key.as_str()) {
                return Err(Error::BadConfig {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    reason: format!("unknown key `{key}`"),
                });
            }
            values.insert(key, (lineno + 1, value.trim().to_string()));
        }
        Ok(ConfigFile {
            path: path.to_path_buf(),
            values,
        })
    }

    fn bad(&self, key: &str, reason: String) -> Error {
        let line = self.values.get(key).map(|(l, _)| *l).unwrap_or(0);
        Error::BadConfig {
            path: self.path.clone(),
            line,
            reason,
        }
    }

    fn get<T, F: FnOnce(&str) -> Option<T>>(&self, key: &str, default: T, parse: F) -> Result<T> {
        match self.values.get(key) {
            None => Ok(default),
            Some((_, raw)) => parse(raw).ok_or_else(|| self.bad(key, format!("cannot parse `{raw}` for {key}"))),
        }
    }

    fn parse_size(raw: &str) -> Option<(usize, usize)> {
        if let Some((h, w)) = raw.split_once(['x', 'X']) {
            Some((h.trim().parse().ok()?, w.trim().parse().ok()?))
        } else {
            let side: usize = raw.trim().parse().ok()?;
            Some((side, side))
        }
    }

    fn parse_pair(raw: &str) -> Option<(f64, f64)> {
        let (a, b) = raw.split_once(',')?;
        Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
    }

    fn parse_quad(raw: &str) -> Option<[usize; 4]> {
        let parts: Vec<usize> = raw
            .split(',')
            .map(|p| p.trim().parse().ok())
            .collect::<Option<_>>()?;
        parts.try_into().ok()
    }

    /// Builds a [`TrainConfig`], with `env_seed` (normally `TENET_SEED`)
    /// overriding the configured seed.
    pub fn train_config_with_env(&self, env_seed: Option<&str>) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let mut cfg = TrainConfig {
            seed: self.get("seed", d.seed, |r| r.parse().ok())?,
            epochs: self.get("epochs", d.epochs, |r| r.parse().ok())?,
            batch_size: self.get("batch_size", d.batch_size, |r| r.parse().ok())?,
            clip_length: self.get("clip_length", d.clip_length, |r| r.parse().ok())?,
            frame_stride: self.get("frame_stride", d.frame_stride, |r| r.parse().ok())?,
            lr_init: self.get("lr_init", d.lr_init, |r| r.parse().ok())?,
            lr_final: self.get("lr_final", d.lr_final, |r| r.parse().ok())?,
            momentum: self.get("momentum", d.momentum, |r| r.parse().ok())?,
            weight_decay: self.get("weight_decay", d.weight_decay, |r| r.parse().ok())?,
            excitation: self.get("excitation", d.excitation, |r| r.parse().ok())?,
            spatial_data: self.get("spatial_data", d.spatial_data, |r| Some(PathBuf::from(r)))?,
            temporal_data: self.get("temporal_data", d.temporal_data, |r| Some(PathBuf::from(r)))?,
            video_data: self.get("video_data", d.video_data, |r| Some(PathBuf::from(r)))?,
            image_size: self.get("image_size", d.image_size, Self::parse_size)?,
            base_channels: self.get("base_channels", d.base_channels, |r| r.parse().ok())?,
            level_channels: self.get("level_channels", d.level_channels, |r| r.parse().ok())?,
            dilation_levels: self.get("dilation_levels", d.dilation_levels, |r| r.parse().ok())?,
            encoder_stride: self.get("encoder_stride", d.encoder_stride, |r| r.parse().ok())?,
            decoder_channels: self.get("decoder_channels", d.decoder_channels, Self::parse_quad)?,
            lstm_hidden: self.get("lstm_hidden", d.lstm_hidden, |r| r.parse().ok())?,
            fuse_mode: self.get("fuse_mode", d.fuse_mode, |r| match r {
                "concat" => Some(FuseMode::Concat),
                "sum" => Some(FuseMode::Sum),
                _ => None,
            })?,
            online_source: self.get("online_source", d.online_source, |r| match r {
                "both" => Some(OnlineSource::Both),
                "spatial" => Some(OnlineSource::SpatialOnly),
                "temporal" => Some(OnlineSource::TemporalOnly),
                _ => None,
            })?,
            online_iters: self.get("online_iters", d.online_iters, |r| r.parse().ok())?,
            checkpoint_every: self.get("checkpoint_every", d.checkpoint_every, |r| r.parse().ok())?,
        };
        if let Some(raw) = env_seed {
            cfg.seed = raw.parse().map_err(|_| {
                Error::InvalidArgument(format!("{SEED_ENV_VAR}=`{raw}` is not a valid seed"))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let env = std::env::var(SEED_ENV_VAR).ok();
        self.train_config_with_env(env.as_deref())
    }

    /// Builds a [`DatasetSpec`] from the dataset keys (sharing `seed` and
    /// `image_size` with the training keys).
    pub fn dataset_spec_with_env(&self, env_seed: Option<&str>) -> Result<DatasetSpec> {
        let d = DatasetSpec::default();
        let mut spec = DatasetSpec {
            seed: self.get("seed", d.seed, |r| r.parse().ok())?,
            num_clips: self.get("num_clips", d.num_clips, |r| r.parse().ok())?,
            frames_per_clip: self.get("frames_per_clip", d.frames_per_clip, |r| r.parse().ok())?,
            image_size: self.get("image_size", d.image_size, Self::parse_size)?,
            moving_shapes: self.get("moving_shapes", d.moving_shapes, |r| r.parse().ok())?,
            distractor_shapes: self.get("distractor_shapes", d.distractor_shapes, |r| r.parse().ok())?,
            velocity_range: self.get("velocity_range", d.velocity_range, Self::parse_pair)?,
            target_foreground_fraction: self.get(
                "target_foreground_fraction",
                d.target_foreground_fraction,
                |r| r.parse().ok(),
            )?,
        };
        if let Some(raw) = env_seed {
            spec.seed = raw.parse().map_err(|_| {
                Error::InvalidArgument(format!("{SEED_ENV_VAR}=`{raw}` is not a valid seed"))
            })?;
        }
        Ok(spec)
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let env = std::env::var(SEED_ENV_VAR).ok();
        self.dataset_spec_with_env(env.as_deref())
    }
}
