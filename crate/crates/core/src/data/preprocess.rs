//! Clip preprocessing: resize to the working resolution plus training-time
//! horizontal/vertical flips applied identically to frames, masks, and flow.

use super::VideoClip;
use crate::error::Result;
use crate::tensor::{bilinear_resize_raw, ResizePlan};
use ndarray::{Array3, Array4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Axis flips drawn for one training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Flips {
    pub horizontal: bool,
    pub vertical: bool,
}

impl Flips {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Flips {
            horizontal: rng.random_bool(0.5),
            vertical: rng.random_bool(0.5),
        }
    }
}

fn resize_plane(src: ndarray::ArrayView2<f64>, plan: &ResizePlan) -> Vec<f64> {
    let owned;
    let slice = match src.as_slice() {
        Some(s) => s,
        None => {
            owned = src.to_owned();
            owned.as_slice().unwrap()
        }
    };
    bilinear_resize_raw(slice, 1, plan)
}

fn resize_clip(clip: &VideoClip, size: (usize, usize)) -> VideoClip {
    let (n, sh, sw, _) = clip.frames.dim();
    let (h, w) = size;
    if (sh, sw) == (h, w) {
        return clip.clone();
    }
    let plan = ResizePlan::new(sh, sw, h, w);
    let mut frames = Array4::zeros((n, h, w, 3));
    let mut flows = Array4::zeros((n, h, w, 2));
    let scale_u = w as f64 / sw as f64;
    let scale_v = h as f64 / sh as f64;
    for f in 0..n {
        for c in 0..3 {
            let plane = resize_plane(clip.frames.slice(ndarray::s![f, .., .., c]), &plan);
            for y in 0..h {
                for x in 0..w {
                    frames[[f, y, x, c]] = plane[y * w + x];
                }
            }
        }
        for c in 0..2 {
            let plane = resize_plane(clip.flows.slice(ndarray::s![f, .., .., c]), &plan);
            let scale = if c == 0 { scale_u } else { scale_v };
            for y in 0..h {
                for x in 0..w {
                    flows[[f, y, x, c]] = plane[y * w + x] * scale;
                }
            }
        }
    }
    let masks = clip.masks.as_ref().map(|m| {
        let mut out = Array3::zeros((n, h, w));
        for f in 0..n {
            let plane = resize_plane(m.slice(ndarray::s![f, .., ..]), &plan);
            for y in 0..h {
                for x in 0..w {
                    out[[f, y, x]] = plane[y * w + x].clamp(0.0, 1.0);
                }
            }
        }
        out
    });
    VideoClip {
        frames,
        masks,
        flows,
        flow_fallback: clip.flow_fallback,
    }
}

/// Applies the given flips to every member of the clip. Flow components are
/// sign-flipped consistently: a horizontal flip negates `u`, a vertical flip
/// negates `v`. Applying the same flips twice restores the clip exactly.
pub fn flip_clip(clip: &VideoClip, flips: Flips) -> VideoClip {
    let (n, h, w, _) = clip.frames.dim();
    let my = |y: usize| if flips.vertical { h - 1 - y } else { y };
    let mx = |x: usize| if flips.horizontal { w - 1 - x } else { x };
    let mut frames = Array4::zeros((n, h, w, 3));
    let mut flows = Array4::zeros((n, h, w, 2));
    for f in 0..n {
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    frames[[f, y, x, c]] = clip.frames[[f, my(y), mx(x), c]];
                }
                let su = if flips.horizontal { -1.0 } else { 1.0 };
                let sv = if flips.vertical { -1.0 } else { 1.0 };
                flows[[f, y, x, 0]] = su * clip.flows[[f, my(y), mx(x), 0]];
                flows[[f, y, x, 1]] = sv * clip.flows[[f, my(y), mx(x), 1]];
            }
        }
    }
    let masks = clip.masks.as_ref().map(|m| {
        let mut out = Array3::zeros((n, h, w));
        for f in 0..n {
            for y in 0..h {
                for x in 0..w {
                    out[[f, y, x]] = m[[f, my(y), mx(x)]];
                }
            }
        }
        out
    });
    VideoClip {
        frames,
        masks,
        flows,
        flow_fallback: clip.flow_fallback,
    }
}

/// Resizes the clip to `size`; when `training`, additionally applies seeded
/// horizontal/vertical flips. Evaluation calls (`training = false`) are fully
/// deterministic and flip-free.
pub fn preprocess(clip: &VideoClip, size: (usize, usize), training: bool, seed: u64) -> Result<VideoClip> {
    let resized = resize_clip(clip, size);
    if !training {
        return Ok(resized);
    }
    let flips = Flips::from_seed(seed);
    if flips == Flips::default() {
        return Ok(resized);
    }
    Ok(flip_clip(&resized, flips))
}
