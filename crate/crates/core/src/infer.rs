//! Inference with online excitation refinement.
//!
//! Iteration 0 is the plain stage-3 forward pass (`alpha = 0`, no ground
//! truth). Every later iteration re-runs the temporal and video branches with
//! the excitation maps replaced by the previous iteration's video prediction.
//! Frame encoders, the bi-directional recurrence, and the spatial branch do
//! not depend on the maps, so their outputs are computed once and reused.

use crate::checkpoint::CheckpointRecord;
use crate::data::{load_clip, preprocess, read_manifest, save_gray_image, VideoClip};
use crate::error::{Error, Result};
use crate::model::{map_to_array2, ExcitationNet, MapMode, OnlineSource};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Graph, ResizePlan, Var};
use ndarray::{Array2, ArrayD};
use std::path::Path;

#[derive(Debug, Clone, Copy)]
pub struct InferOptions {
    pub online_iters: usize,
    pub source: OnlineSource,
    /// When false, every excitation map is pinned to ones (ablation baseline);
    /// online iterations then change nothing.
    pub excitation: bool,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            online_iters: 20,
            source: OnlineSource::Both,
            excitation: true,
        }
    }
}

/// Per-frame tensors that stay fixed across online iterations.
struct FrameCache {
    spatial_map: Array2<f64>,
    flow_latent: ArrayD<f64>,
    temporal_skips: Vec<ArrayD<f64>>,
    hidden_fwd: ArrayD<f64>,
    hidden_bwd: ArrayD<f64>,
    video_skips: Vec<ArrayD<f64>>,
}

fn grab(g: &Graph, v: Var) -> ArrayD<f64> {
    g.value(v).clone()
}

/// Runs online-excited inference over one preprocessed clip, returning the
/// final iteration's video saliency maps.
pub fn infer(
    net: &ExcitationNet,
    store: &ParamStore,
    clip: &VideoClip,
    opts: &InferOptions,
) -> Result<Vec<Array2<f64>>> {
    let cfg = net.config();
    if clip.size() != cfg.input_size {
        return Err(Error::shape(
            "infer clip",
            format!("{:?}", cfg.input_size),
            format!("{:?}", clip.size()),
        ));
    }
    let mode = if opts.excitation {
        MapMode::Normal
    } else {
        MapMode::Ones
    };
    let n = clip.len();

    // Iteration 0: full forward pass, caching everything map-independent.
    let mut caches = Vec::with_capacity(n);
    let mut temporal_maps = Vec::with_capacity(n);
    let mut video_maps;
    {
        let mut g = Graph::new();
        let bound = Bound::bind(&mut g, store, false);
        let mut feats = Vec::with_capacity(n);
        let mut video_skip_vars = Vec::with_capacity(n);
        let mut st_list = Vec::with_capacity(n);
        let mut es_list = Vec::with_capacity(n);
        let mut et_list = Vec::with_capacity(n);
        let mut partial = Vec::with_capacity(n);
        for i in 0..n {
            let frame = g.constant(clip.frame_chw(i).into_dyn());
            let (ss, es) = net.spatial_branch(&mut g, &bound, frame, None, 0.0, mode)?;
            let flow = g.constant(clip.flow_chw(i).into_dyn());
            let enc_t = net.temporal_encoder.forward(&mut g, &bound, flow)?;
            let st = net.temporal_decode(&mut g, &bound, enc_t.features, &enc_t.skips, &es, mode)?;
            let et_full = map_to_array2(&g, st);
            let et = match mode {
                MapMode::Ones => Array2::ones(cfg.input_size),
                _ => et_full.clone(),
            };
            let enc_v = net.video_encoder.forward(&mut g, &bound, frame)?;
            feats.push(enc_v.features);
            video_skip_vars.push(enc_v.skips.clone());
            st_list.push(et_full);
            es_list.push(es.clone());
            et_list.push(et);
            partial.push((map_to_array2(&g, ss), grab(&g, enc_t.features), enc_t.skips));
        }
        let (hf, hb) = crate::backbone::bidirectional_pass(&mut g, &bound, &net.lstm_fwd, &net.lstm_bwd, &feats)?;
        video_maps = Vec::with_capacity(n);
        for i in 0..n {
            let sv = net.video_decode(
                &mut g,
                &bound,
                hf[i],
                hb[i],
                &video_skip_vars[i],
                &es_list[i],
                &et_list[i],
                mode,
            )?;
            video_maps.push(map_to_array2(&g, sv));
        }
        for i in 0..n {
            let (spatial_map, flow_latent, t_skips) = partial[i].clone();
            caches.push(FrameCache {
                spatial_map,
                flow_latent,
                temporal_skips: t_skips.iter().map(|&s| grab(&g, s)).collect(),
                hidden_fwd: grab(&g, hf[i]),
                hidden_bwd: grab(&g, hb[i]),
                video_skips: video_skip_vars[i].iter().map(|&s| grab(&g, s)).collect(),
            });
            temporal_maps.push(st_list[i].clone());
        }
    }

    // Online refinement: replace the excitation maps with the previous video
    // prediction and re-run the temporal and video branches.
    for _ in 0..opts.online_iters {
        let prev = video_maps.clone();
        let mut g = Graph::new();
        let bound = Bound::bind(&mut g, store, false);
        let mut next_video = Vec::with_capacity(n);
        let mut next_temporal = Vec::with_capacity(n);
        for i in 0..n {
            let cache = &caches[i];
            let es_used = match (mode, opts.source) {
                (MapMode::Ones, _) => Array2::ones(cfg.input_size),
                (_, OnlineSource::Both | OnlineSource::SpatialOnly) => prev[i].clone(),
                _ => cache.spatial_map.clone(),
            };
            let latent = g.constant(cache.flow_latent.clone());
            let skips: Vec<Var> = cache.temporal_skips.iter().map(|s| g.constant(s.clone())).collect();
            let st = net.temporal_decode(&mut g, &bound, latent, &skips, &es_used, mode)?;
            let st_map = map_to_array2(&g, st);
            let et_used = match (mode, opts.source) {
                (MapMode::Ones, _) => Array2::ones(cfg.input_size),
                (_, OnlineSource::Both | OnlineSource::TemporalOnly) => prev[i].clone(),
                _ => st_map.clone(),
            };
            let hfv = g.constant(cache.hidden_fwd.clone());
            let hbv = g.constant(cache.hidden_bwd.clone());
            let vskips: Vec<Var> = cache.video_skips.iter().map(|s| g.constant(s.clone())).collect();
            let sv = net.video_decode(&mut g, &bound, hfv, hbv, &vskips, &es_used, &et_used, mode)?;
            next_video.push(map_to_array2(&g, sv));
            next_temporal.push(st_map);
        }
        let converged = next_video == prev;
        video_maps = next_video;
        temporal_maps = next_temporal;
        if converged {
            break; // deterministic fixed point: later iterations are identical
        }
    }
    let _ = temporal_maps;
    Ok(video_maps)
}

/// Convenience wrapper: instantiates the checkpointed model and preprocesses
/// the clip to the model's working resolution first.
pub fn infer_clip(
    record: &CheckpointRecord,
    clip: &VideoClip,
    opts: &InferOptions,
) -> Result<Vec<Array2<f64>>> {
    let (net, store) = record.instantiate()?;
    let prepared = preprocess(clip, record.model.input_size, false, 0)?;
    infer(&net, &store, &prepared, opts)
}

/// Runs inference over every clip under `dataset_root`, writing predictions
/// as 8-bit grayscale images that mirror the dataset layout
/// (`<out>/<clip>/masks/%05d.png`), resized back to each clip's native
/// resolution. Returns the clip names processed.
pub fn predict_dataset(
    record: &CheckpointRecord,
    dataset_root: &Path,
    out_dir: &Path,
    opts: &InferOptions,
) -> Result<Vec<String>> {
    let manifest = read_manifest(dataset_root)?;
    if manifest.is_empty() {
        return Err(Error::MissingDataset(dataset_root.to_path_buf()));
    }
    let (net, store) = record.instantiate()?;
    let mut processed = Vec::with_capacity(manifest.len());
    for (name, _) in &manifest {
        let clip = load_clip(&dataset_root.join(name))?;
        let (native_h, native_w) = clip.size();
        let prepared = preprocess(&clip, record.model.input_size, false, 0)?;
        let maps = infer(&net, &store, &prepared, opts)?;
        let mask_dir = out_dir.join(name).join("masks");
        std::fs::create_dir_all(&mask_dir)?;
        for (i, map) in maps.iter().enumerate() {
            let out_map = if map.dim() == (native_h, native_w) {
                map.clone()
            } else {
                let (mh, mw) = map.dim();
                let plan = ResizePlan::new(mh, mw, native_h, native_w);
                let src = map.as_standard_layout();
                let resized =
                    crate::tensor::bilinear_resize_raw(src.as_slice().unwrap(), 1, &plan);
                Array2::from_shape_vec((native_h, native_w), resized).unwrap()
            };
            save_gray_image(&out_map, &mask_dir.join(format!("{i:05}.png")))?;
        }
        processed.push(name.clone());
    }
    Ok(processed)
}
