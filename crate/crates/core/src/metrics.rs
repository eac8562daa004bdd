//! Saliency evaluation: mean absolute error, maximum F-beta over binarization
//! thresholds, structural measure, and dataset-level aggregation.

use crate::data::load_gray_image;
use crate::error::{Error, Result};
use ndarray::Array2;
use std::fmt::Write as _;
use std::path::Path;

/// `beta^2` of the F-measure.
pub const F_BETA_SQUARED: f64 = 0.3;
/// Number of uniform binarization thresholds swept for max F (8-bit convention).
pub const F_THRESHOLDS: usize = 256;
/// Weight of the object-aware term inside the structural measure.
pub const S_MEASURE_MU: f64 = 0.5;

fn check_dims(s: &Array2<f64>, gt: &Array2<f64>, context: &'static str) -> Result<()> {
    if s.dim() != gt.dim() {
        return Err(Error::shape(
            context,
            format!("{:?}", gt.dim()),
            format!("{:?}", s.dim()),
        ));
    }
    Ok(())
}

/// Mean absolute error between a prediction and its ground truth.
pub fn mae(s: &Array2<f64>, gt: &Array2<f64>) -> Result<f64> {
    check_dims(s, gt, "mae")?;
    let n = s.len() as f64;
    Ok(s.iter().zip(gt.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// Maximum F-beta over 256 uniform thresholds `t_i = i/255`, binarizing with
/// `S >= t_i`. Thresholds with zero predicted positives contribute `F = 0`.
/// Errors on ground truth with empty foreground, where recall is undefined.
pub fn max_f_beta(s: &Array2<f64>, gt: &Array2<f64>) -> Result<f64> {
    check_dims(s, gt, "max F-beta")?;
    let total_pos: usize = gt.iter().filter(|&&v| v >= 0.5).count();
    if total_pos == 0 {
        return Err(Error::EmptyForeground);
    }
    // Histogram the prediction into 256 bins: S >= i/255 iff floor(S*255) >= i.
    let mut fg_hist = [0usize; F_THRESHOLDS];
    let mut bg_hist = [0usize; F_THRESHOLDS];
    for (&sv, &gv) in s.iter().zip(gt.iter()) {
        let bin = ((sv * 255.0).floor() as isize).clamp(0, 255) as usize;
        if gv >= 0.5 {
            fg_hist[bin] += 1;
        } else {
            bg_hist[bin] += 1;
        }
    }
    let mut best: f64 = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    for i in (0..F_THRESHOLDS).rev() {
        tp += fg_hist[i];
        fp += bg_hist[i];
        if tp + fp == 0 {
            continue;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / total_pos as f64;
        let denom = F_BETA_SQUARED * precision + recall;
        if denom > 0.0 {
            let f = (1.0 + F_BETA_SQUARED) * precision * recall / denom;
            best = best.max(f);
        }
    }
    Ok(best)
}

fn mean_of(values: impl Iterator<Item = f64>, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        values.sum::<f64>() / count as f64
    }
}

/// Object-level similarity of the masked prediction against a region.
fn object_score(pred: &Array2<f64>, region: &Array2<bool>) -> f64 {
    let count = region.iter().filter(|&&b| b).count();
    if count == 0 {
        return 0.0;
    }
    let vals: Vec<f64> = pred
        .iter()
        .zip(region.iter())
        .filter_map(|(&p, &b)| b.then_some(p))
        .collect();
    let mean = mean_of(vals.iter().copied(), count);
    let std = if count > 1 {
        (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + std + f64::EPSILON)
}

fn s_object(s: &Array2<f64>, gt_bin: &Array2<bool>) -> f64 {
    let fg = gt_bin.clone();
    let bg = gt_bin.mapv(|b| !b);
    let pred_bg = s.mapv(|v| 1.0 - v);
    let mu = gt_bin.iter().filter(|&&b| b).count() as f64 / gt_bin.len() as f64;
    mu * object_score(s, &fg) + (1.0 - mu) * object_score(&pred_bg, &bg)
}

/// Region SSIM variant used by the structural measure (sample moments).
fn region_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    if pred.is_empty() {
        return 1.0;
    }
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let denom_n = n - 1.0 + f64::EPSILON;
    let var_x = pred.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / denom_n;
    let var_y = gt.iter().map(|v| (v - y) * (v - y)).sum::<f64>() / denom_n;
    let cov = pred
        .iter()
        .zip(gt.iter())
        .map(|(p, q)| (p - x) * (q - y))
        .sum::<f64>()
        / denom_n;
    let alpha = 4.0 * x * y * cov;
    let beta = (x * x + y * y) * (var_x + var_y);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Foreground centroid of a binary mask, split-point form. Uses floor so the
/// four-block partition mirrors under flips for non-integer centroids.
fn centroid_split(gt_bin: &Array2<bool>) -> (usize, usize) {
    let (h, w) = gt_bin.dim();
    let area: usize = gt_bin.iter().filter(|&&b| b).count();
    if area == 0 {
        return (h / 2, w / 2);
    }
    let mut sy = 0.0;
    let mut sx = 0.0;
    for ((y, x), &b) in gt_bin.indexed_iter() {
        if b {
            sy += y as f64;
            sx += x as f64;
        }
    }
    let cy = (sy / area as f64).floor() as usize;
    let cx = (sx / area as f64).floor() as usize;
    (cy.min(h.saturating_sub(2)), cx.min(w.saturating_sub(2)))
}

fn block_values(a: &Array2<f64>, ys: std::ops::Range<usize>, xs: std::ops::Range<usize>) -> Vec<f64> {
    let mut out = Vec::with_capacity(ys.len() * xs.len());
    for y in ys {
        for x in xs.clone() {
            out.push(a[[y, x]]);
        }
    }
    out
}

fn s_region(s: &Array2<f64>, gt_bin: &Array2<bool>) -> f64 {
    let (h, w) = gt_bin.dim();
    let (cy, cx) = centroid_split(gt_bin);
    let gt_f = gt_bin.mapv(|b| f64::from(u8::from(b)));
    let total = (h * w) as f64;
    let mut score = 0.0;
    for (ys, xs) in [
        (0..cy + 1, 0..cx + 1),
        (0..cy + 1, cx + 1..w),
        (cy + 1..h, 0..cx + 1),
        (cy + 1..h, cx + 1..w),
    ] {
        let weight = (ys.len() * xs.len()) as f64 / total;
        if weight == 0.0 {
            continue;
        }
        let pv = block_values(s, ys.clone(), xs.clone());
        let gv = block_values(&gt_f, ys, xs);
        score += weight * region_ssim(&pv, &gv);
    }
    score
}

/// Structural measure `mu * S_object + (1 - mu) * S_region` with `mu = 0.5`,
/// clamped to `[0,1]`. Degenerate ground truth follows the usual conventions:
/// an all-background mask scores `1 - mean(S)`, an all-foreground one `mean(S)`.
pub fn s_measure(s: &Array2<f64>, gt: &Array2<f64>) -> Result<f64> {
    check_dims(s, gt, "s-measure")?;
    let gt_bin = gt.mapv(|v| v >= 0.5);
    let fg = gt_bin.iter().filter(|&&b| b).count();
    let mean_pred = s.iter().sum::<f64>() / s.len() as f64;
    let score = if fg == 0 {
        1.0 - mean_pred
    } else if fg == gt_bin.len() {
        mean_pred
    } else {
        S_MEASURE_MU * s_object(s, &gt_bin) + (1.0 - S_MEASURE_MU) * s_region(s, &gt_bin)
    };
    Ok(score.clamp(0.0, 1.0))
}

/// Metrics of one clip (per-frame means).
#[derive(Debug, Clone, PartialEq)]
pub struct ClipMetrics {
    pub clip: String,
    pub frames: usize,
    pub mae: f64,
    /// `None` when every frame had empty-foreground ground truth.
    pub max_f: Option<f64>,
    pub s_measure: f64,
    /// Frames excluded from max-F because their ground truth was empty.
    pub skipped_empty_gt: usize,
}

/// Dataset evaluation: per-clip rows plus dataset means (mean of clip means).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub clips: Vec<ClipMetrics>,
    pub mean_mae: f64,
    pub mean_max_f: f64,
    pub mean_s_measure: f64,
    pub total_frames: usize,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("clip,frames,mae,maxf,smeasure\n");
        for c in &self.clips {
            let maxf = c.max_f.map(|v| format!("{v:.6}")).unwrap_or_else(|| "nan".into());
            let _ = writeln!(out, "{},{},{:.6},{},{:.6}", c.clip, c.frames, c.mae, maxf, c.s_measure);
        }
        let _ = writeln!(
            out,
            "mean,{},{:.6},{:.6},{:.6}",
            self.total_frames, self.mean_mae, self.mean_max_f, self.mean_s_measure
        );
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<20} {:>7} {:>9} {:>9} {:>9}", "clip", "frames", "MAE", "maxF", "S");
        for c in &self.clips {
            let maxf = c.max_f.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<20} {:>7} {:>9.4} {:>9} {:>9.4}",
                c.clip, c.frames, c.mae, maxf, c.s_measure
            );
            if c.skipped_empty_gt > 0 {
                let _ = writeln!(out, "  ({} frames skipped for max-F: empty ground truth)", c.skipped_empty_gt);
            }
        }
        let _ = writeln!(
            out,
            "{:<20} {:>7} {:>9.4} {:>9.4} {:>9.4}",
            "mean", self.total_frames, self.mean_mae, self.mean_max_f, self.mean_s_measure
        );
        out
    }
}

fn mask_files(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

/// Compares a prediction tree against a ground-truth tree. Both roots hold
/// one directory per clip with grayscale maps under `masks/`; frames are
/// matched by filename, a missing prediction is a hard error naming the frame.
pub fn evaluate_dataset(pred_root: &Path, gt_root: &Path) -> Result<MetricReport> {
    if !gt_root.is_dir() {
        return Err(Error::MissingDataset(gt_root.to_path_buf()));
    }
    let mut clip_dirs: Vec<String> = std::fs::read_dir(gt_root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("masks").is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    clip_dirs.sort();
    if clip_dirs.is_empty() {
        return Err(Error::MissingDataset(gt_root.to_path_buf()));
    }
    let mut clips = Vec::with_capacity(clip_dirs.len());
    for clip in clip_dirs {
        let gt_masks = gt_root.join(&clip).join("masks");
        let mut mae_sum = 0.0;
        let mut s_sum = 0.0;
        let mut f_sum = 0.0;
        let mut f_count = 0usize;
        let mut skipped = 0usize;
        let frames = mask_files(&gt_masks)?;
        for name in &frames {
            let gt = load_gray_image(&gt_masks.join(name))?;
            let pred_path = pred_root.join(&clip).join("masks").join(name);
            if !pred_path.is_file() {
                return Err(Error::MissingPrediction {
                    clip: clip.clone(),
                    frame: name.clone(),
                });
            }
            let pred = load_gray_image(&pred_path)?;
            mae_sum += mae(&pred, &gt)?;
            s_sum += s_measure(&pred, &gt)?;
            match max_f_beta(&pred, &gt) {
                Ok(f) => {
                    f_sum += f;
                    f_count += 1;
                }
                Err(Error::EmptyForeground) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        let n = frames.len();
        clips.push(ClipMetrics {
            clip,
            frames: n,
            mae: mae_sum / n as f64,
            max_f: (f_count > 0).then(|| f_sum / f_count as f64),
            s_measure: s_sum / n as f64,
            skipped_empty_gt: skipped,
        });
    }
    let nc = clips.len() as f64;
    let with_f: Vec<f64> = clips.iter().filter_map(|c| c.max_f).collect();
    Ok(MetricReport {
        mean_mae: clips.iter().map(|c| c.mae).sum::<f64>() / nc,
        mean_max_f: if with_f.is_empty() {
            0.0
        } else {
            with_f.iter().sum::<f64>() / with_f.len() as f64
        },
        mean_s_measure: clips.iter().map(|c| c.s_measure).sum::<f64>() / nc,
        total_frames: clips.iter().map(|c| c.frames).sum(),
        clips,
    })
}
