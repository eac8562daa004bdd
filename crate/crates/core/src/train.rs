//! Training loop: round-robin alternation over spatial-image, temporal-flow,
//! and full-video batches, SGD with momentum under a cosine learning-rate
//! decay, the epoch-driven excitation curriculum, checkpointing, and a CSV
//! loss log.

use crate::checkpoint::{save_checkpoint, CheckpointRecord};
use crate::config::TrainConfig;
use crate::data::{flip_clip, load_clip, preprocess, read_manifest, Flips, VideoClip};
use crate::error::{Error, Result};
use crate::excitation::CurriculumState;
use crate::losses::{hybrid_loss, total_loss, LossConfig};
use crate::model::{ExcitationNet, ForwardOptions, FrameVars, MapMode};
use crate::optim::{cosine_lr, sgd_step, SgdConfig};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Graph, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// One optimizer step in the loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: u32,
    pub iter: usize,
    pub branch: &'static str,
    pub bce: f64,
    pub ssim: f64,
    pub iou: f64,
    pub total: f64,
    pub alpha: f64,
    pub lr: f64,
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("epoch,iter,branch,bce,ssim,iou,total,alpha,lr\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9e}",
            r.epoch, r.iter, r.branch, r.bce, r.ssim, r.iou, r.total, r.alpha, r.lr
        );
    }
    out
}

pub struct TrainOutcome {
    pub record: CheckpointRecord,
    pub log: Vec<LogRow>,
    /// Mean total objective of the full-video steps, one entry per epoch.
    pub epoch_video_loss: Vec<f64>,
    pub checkpoint_path: PathBuf,
}

struct Corpus {
    clips: Vec<VideoClip>,
}

impl Corpus {
    fn load(root: &Path, size: (usize, usize)) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::MissingDataset(root.to_path_buf()));
        }
        let manifest = read_manifest(root)?;
        if manifest.is_empty() {
            return Err(Error::MissingDataset(root.to_path_buf()));
        }
        let mut clips = Vec::with_capacity(manifest.len());
        for (name, _) in &manifest {
            let clip = load_clip(&root.join(name))?;
            if clip.masks.is_none() {
                return Err(Error::InvalidArgument(format!(
                    "training clip {name} has no ground-truth masks"
                )));
            }
            clips.push(preprocess(&clip, size, false, 0)?);
        }
        Ok(Corpus { clips })
    }

    /// (clip, frame) pairs for single-frame sampling. `min_frame` skips the
    /// zero-flow frame 0 where a clip has real flow to offer.
    fn frame_pool(&self, min_frame: usize) -> Vec<(usize, usize)> {
        let mut pool = Vec::new();
        for (ci, clip) in self.clips.iter().enumerate() {
            let lo = if clip.len() > min_frame { min_frame } else { 0 };
            for f in lo..clip.len() {
                pool.push((ci, f));
            }
        }
        pool
    }

    /// (clip, window start) pairs for clip sampling.
    fn window_pool(&self, clip_length: usize, stride: usize) -> Vec<(usize, usize)> {
        let mut pool = Vec::new();
        for (ci, clip) in self.clips.iter().enumerate() {
            if clip.len() <= clip_length {
                pool.push((ci, 0));
            } else {
                let mut start = 0;
                while start + clip_length <= clip.len() {
                    pool.push((ci, start));
                    start += stride;
                }
            }
        }
        pool
    }
}

struct Sampler {
    pool: Vec<(usize, usize)>,
    cursor: usize,
}

impl Sampler {
    fn new(pool: Vec<(usize, usize)>) -> Self {
        Sampler { pool, cursor: 0 }
    }

    fn reshuffle(&mut self, rng: &mut ChaCha8Rng) {
        self.pool.shuffle(rng);
        self.cursor = 0;
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        if self.cursor >= self.pool.len() {
            self.reshuffle(rng);
        }
        let item = self.pool[self.cursor];
        self.cursor += 1;
        item
    }
}

fn augmented_window(clip: &VideoClip, start: usize, len: usize, seed: u64) -> VideoClip {
    let window = clip.window(start, len);
    let flips = Flips::from_seed(seed);
    if flips == Flips::default() {
        window
    } else {
        flip_clip(&window, flips)
    }
}

struct StepStats {
    bce: f64,
    ssim: f64,
    iou: f64,
    total: f64,
}

/// Shared per-step machinery: average the per-sample losses, backpropagate,
/// apply SGD, and report component means.
fn optimize_step(
    g: &mut Graph,
    bound: &Bound,
    store: &mut ParamStore,
    sample_losses: Vec<(Var, StepStats)>,
    sgd: SgdConfig,
    lr: f64,
) -> StepStats {
    let n = sample_losses.len() as f64;
    let mut acc: Option<Var> = None;
    let mut stats = StepStats {
        bce: 0.0,
        ssim: 0.0,
        iou: 0.0,
        total: 0.0,
    };
    for (loss, s) in sample_losses {
        stats.bce += s.bce / n;
        stats.ssim += s.ssim / n;
        stats.iou += s.iou / n;
        stats.total += s.total / n;
        acc = Some(match acc {
            Some(a) => g.add(a, loss),
            None => loss,
        });
    }
    let mean = g.affine(acc.expect("nonempty batch"), 1.0 / n, 0.0);
    let grads = g.backward(mean);
    sgd_step(store, bound, &grads, sgd, lr);
    stats
}

/// Runs the full training loop, writing checkpoints and the loss log under
/// `out_dir`, and returns the final record plus the in-memory log.
pub fn train(cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let model_cfg = cfg.model_config();
    let loss_cfg = loss_config_for(cfg.image_size);
    let sgd = SgdConfig {
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    };
    let map_mode = if cfg.excitation {
        MapMode::Normal
    } else {
        MapMode::Ones
    };

    // The three corpora may share directories; load each distinct root once.
    let spatial = Corpus::load(&cfg.spatial_data, cfg.image_size)?;
    let temporal_store;
    let temporal_ref: &Corpus = if cfg.temporal_data == cfg.spatial_data {
        &spatial
    } else {
        temporal_store = Corpus::load(&cfg.temporal_data, cfg.image_size)?;
        &temporal_store
    };
    let video_store;
    let video_ref: &Corpus = if cfg.video_data == cfg.spatial_data {
        &spatial
    } else if cfg.video_data == cfg.temporal_data {
        temporal_ref
    } else {
        video_store = Corpus::load(&cfg.video_data, cfg.image_size)?;
        &video_store
    };

    let mut store = ParamStore::new();
    let net = ExcitationNet::new(&mut store, cfg.seed, model_cfg)?;

    let mut spatial_sampler = Sampler::new(spatial.frame_pool(0));
    let mut temporal_sampler = Sampler::new(temporal_ref.frame_pool(1));
    let mut video_sampler = Sampler::new(video_ref.window_pool(cfg.clip_length, cfg.frame_stride));
    if video_sampler.pool.is_empty() || spatial_sampler.pool.is_empty() || temporal_sampler.pool.is_empty() {
        return Err(Error::MissingDataset(cfg.video_data.clone()));
    }

    let iters_per_epoch = video_sampler.pool.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs as usize * iters_per_epoch * 3;
    let mut step = 0usize;
    let mut log = Vec::new();
    let mut epoch_video_loss = Vec::with_capacity(cfg.epochs as usize);
    let mut final_curriculum = CurriculumState::for_epoch(1);

    for epoch in 1..=cfg.epochs {
        let cur = CurriculumState::for_epoch(epoch);
        final_curriculum = cur;
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        epoch_rng.set_stream(1_000 + epoch as u64);
        spatial_sampler.reshuffle(&mut epoch_rng);
        temporal_sampler.reshuffle(&mut epoch_rng);
        video_sampler.reshuffle(&mut epoch_rng);
        let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        aug_rng.set_stream(2_000_000 + epoch as u64);

        let mut video_losses = Vec::with_capacity(iters_per_epoch);
        for iter in 0..iters_per_epoch {
            // Spatial-image step.
            let lr = cosine_lr(step, total_steps, cfg.lr_init, cfg.lr_final);
            let mut g = Graph::new();
            let bound = Bound::bind(&mut g, &store, true);
            let mut sample_losses = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let (ci, fi) = spatial_sampler.next(&mut epoch_rng);
                let window = augmented_window(&spatial.clips[ci], fi, 1, aug_rng.random());
                let gt = window.mask(0).expect("training corpus has masks");
                let frame = g.constant(window.frame_chw(0).into_dyn());
                let (ss, _) = net.spatial_branch(&mut g, &bound, frame, Some(&gt), cur.alpha, map_mode)?;
                let l = hybrid_loss(&mut g, ss, &gt, &loss_cfg)?;
                sample_losses.push((
                    l.total,
                    StepStats {
                        bce: g.scalar_value(l.bce),
                        ssim: g.scalar_value(l.ssim),
                        iou: g.scalar_value(l.iou),
                        total: g.scalar_value(l.total),
                    },
                ));
            }
            let stats = optimize_step(&mut g, &bound, &mut store, sample_losses, sgd, lr);
            push_row(&mut log, epoch, iter, "spatial", &stats, cur.alpha, lr)?;
            step += 1;

            // Temporal-flow step: the spatial branch supplies the excitation
            // map as a constant; only the temporal path receives gradients.
            let lr = cosine_lr(step, total_steps, cfg.lr_init, cfg.lr_final);
            let mut g = Graph::new();
            let bound = Bound::bind(&mut g, &store, true);
            let mut sample_losses = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let (ci, fi) = temporal_sampler.next(&mut epoch_rng);
                let window = augmented_window(&temporal_ref.clips[ci], fi, 1, aug_rng.random());
                let gt = window.mask(0).expect("training corpus has masks");
                let frame = g.constant(window.frame_chw(0).into_dyn());
                let (_, es) = net.spatial_branch(&mut g, &bound, frame, Some(&gt), cur.alpha, map_mode)?;
                let flow = g.constant(window.flow_chw(0).into_dyn());
                let (st, _) =
                    net.temporal_branch(&mut g, &bound, flow, &es, Some(&gt), cur.alpha, map_mode)?;
                let l = hybrid_loss(&mut g, st, &gt, &loss_cfg)?;
                sample_losses.push((
                    l.total,
                    StepStats {
                        bce: g.scalar_value(l.bce),
                        ssim: g.scalar_value(l.ssim),
                        iou: g.scalar_value(l.iou),
                        total: g.scalar_value(l.total),
                    },
                ));
            }
            let stats = optimize_step(&mut g, &bound, &mut store, sample_losses, sgd, lr);
            push_row(&mut log, epoch, iter, "temporal", &stats, cur.alpha, lr)?;
            step += 1;

            // Full-video step: the whole objective over all three branches.
            let lr = cosine_lr(step, total_steps, cfg.lr_init, cfg.lr_final);
            let mut g = Graph::new();
            let bound = Bound::bind(&mut g, &store, true);
            let mut sample_losses = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let (ci, start) = video_sampler.next(&mut epoch_rng);
                let window =
                    augmented_window(&video_ref.clips[ci], start, cfg.clip_length, aug_rng.random());
                let opts = ForwardOptions {
                    alpha: cur.alpha,
                    use_gt: true,
                    excitation: map_mode,
                    replace: None,
                };
                let frames: Vec<FrameVars> = net.forward(&mut g, &bound, &window, &opts)?;
                let gts: Vec<_> = (0..window.len()).map(|i| window.mask(i).unwrap()).collect();
                let s: Vec<Var> = frames.iter().map(|f| f.spatial).collect();
                let t: Vec<Var> = frames.iter().map(|f| f.temporal).collect();
                let v: Vec<Var> = frames.iter().map(|f| f.video).collect();
                let (loss, parts) = total_loss(&mut g, &s, &t, &v, &gts, &loss_cfg)?;
                sample_losses.push((
                    loss,
                    StepStats {
                        bce: parts.spatial.bce + parts.temporal.bce + parts.video.bce,
                        ssim: parts.spatial.ssim + parts.temporal.ssim + parts.video.ssim,
                        iou: parts.spatial.iou + parts.temporal.iou + parts.video.iou,
                        total: parts.total,
                    },
                ));
            }
            let stats = optimize_step(&mut g, &bound, &mut store, sample_losses, sgd, lr);
            video_losses.push(stats.total);
            push_row(&mut log, epoch, iter, "video", &stats, cur.alpha, lr)?;
            step += 1;
        }
        epoch_video_loss.push(video_losses.iter().sum::<f64>() / video_losses.len() as f64);

        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs {
            let record = CheckpointRecord::new(model_cfg, cur, store.clone());
            save_checkpoint(&record, &out_dir.join(format!("epoch_{epoch:03}.ckpt")))?;
        }
    }

    let record = CheckpointRecord::new(model_cfg, final_curriculum, store);
    let checkpoint_path = out_dir.join("final.ckpt");
    save_checkpoint(&record, &checkpoint_path)?;
    std::fs::write(out_dir.join("loss_log.csv"), log_to_csv(&log))?;
    Ok(TrainOutcome {
        record,
        log,
        epoch_video_loss,
        checkpoint_path,
    })
}

/// SSIM windows must fit the working resolution; shrink below the default for
/// very small training images.
pub fn loss_config_for(image_size: (usize, usize)) -> LossConfig {
    let default = LossConfig::default();
    let min_side = image_size.0.min(image_size.1);
    LossConfig {
        ssim_window: default.ssim_window.min(min_side),
        ..default
    }
}

fn push_row(
    log: &mut Vec<LogRow>,
    epoch: u32,
    iter: usize,
    branch: &'static str,
    stats: &StepStats,
    alpha: f64,
    lr: f64,
) -> Result<()> {
    if !stats.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch,
            iter,
            branch,
        });
    }
    log.push(LogRow {
        epoch,
        iter,
        branch,
        bce: stats.bce,
        ssim: stats.ssim,
        iou: stats.iou,
        total: stats.total,
        alpha,
        lr,
    });
    Ok(())
}
