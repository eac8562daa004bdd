//! Shared test support: finite-difference gradient checking, independent
//! brute-force oracles, and tiny deterministic fixtures.
//!
//! Everything here is deliberately written as direct formula evaluation or
//! exhaustive enumeration, independent of the library's computation paths.

#![allow(dead_code)]

pub mod oracle_suite;

use ndarray::{Array2, Array3, Array4, ArrayD};
use vsod_core::params::ParamStore;
use vsod_core::VideoClip;

// ---- finite differences -----------------------------------------------------

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central-difference check of `d loss / d store[param][index]` against the
/// provided analytic gradients for every sampled coordinate.
pub fn fd_check_params(
    store: &ParamStore,
    loss: impl Fn(&ParamStore) -> f64,
    analytic: &[Option<ArrayD<f64>>],
    samples: &[(usize, usize)],
    h: f64,
    tol: f64,
    label: &str,
) {
    for &(p, i) in samples {
        let mut plus = store.clone();
        plus.entries_mut()[p].value.as_slice_mut().unwrap()[i] += h;
        let mut minus = store.clone();
        minus.entries_mut()[p].value.as_slice_mut().unwrap()[i] -= h;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let ana = analytic[p]
            .as_ref()
            .map(|g| g.as_slice().unwrap()[i])
            .unwrap_or(0.0);
        if numeric.abs() < 1e-10 && ana.abs() < 1e-10 {
            continue;
        }
        let err = relative_error(numeric, ana);
        assert!(
            err <= tol,
            "{label}: param {p}[{i}] numeric={numeric:.10e} analytic={ana:.10e} rel_err={err:.3e}"
        );
    }
}

/// Deterministically samples up to `per_param` coordinates from each listed
/// parameter tensor.
pub fn sample_coords(store: &ParamStore, params: &[usize], per_param: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for &p in params {
        let len = store.entries()[p].value.len();
        let take = per_param.min(len);
        for k in 0..take {
            // Spread samples across the tensor with a fixed odd stride.
            out.push((p, (k * 7919 + 13) % len));
        }
    }
    out
}

pub fn param_index(store: &ParamStore, name: &str) -> usize {
    store
        .entries()
        .iter()
        .position(|e| e.name == name)
        .unwrap_or_else(|| panic!("parameter {name} not found"))
}

// ---- deterministic fixtures ---------------------------------------------------

/// Smooth deterministic pseudo-random value in [0,1).
pub fn hash01(seed: u64, i: u64) -> f64 {
    let mut x = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(i.wrapping_mul(0xBF58476D1CE4E5B9));
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58476D1CE4E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D049BB133111EB);
    x ^= x >> 31;
    (x >> 11) as f64 / (1u64 << 53) as f64
}

pub fn random_map(h: usize, w: usize, seed: u64) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |(y, x)| hash01(seed, (y * w + x) as u64))
}

pub fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    ArrayD::from_shape_vec(
        ndarray::IxDyn(shape),
        (0..n).map(|i| (hash01(seed, i as u64) - 0.5) * 2.0 * scale).collect(),
    )
    .unwrap()
}

/// An in-memory clip with a moving bright square, its mask, and matching flow.
pub fn synthetic_clip(h: usize, w: usize, frames: usize, seed: u64) -> VideoClip {
    let side = (h.min(w) / 4).max(2);
    let mut fr = Array4::zeros((frames, h, w, 3));
    let mut ma = Array3::zeros((frames, h, w));
    let mut fl = Array4::zeros((frames, h, w, 2));
    for f in 0..frames {
        let oy = (1 + f) % (h - side);
        let ox = (1 + 2 * f) % (w - side);
        for y in 0..h {
            for x in 0..w {
                let inside = (oy..oy + side).contains(&y) && (ox..ox + side).contains(&x);
                let bg = 0.3 + 0.05 * hash01(seed, (y * w + x) as u64);
                for c in 0..3 {
                    fr[[f, y, x, c]] = if inside { 0.7 + 0.1 * c as f64 / 3.0 } else { bg };
                }
                if inside {
                    ma[[f, y, x]] = 1.0;
                    if f > 0 {
                        fl[[f, y, x, 0]] = 2.0;
                        fl[[f, y, x, 1]] = 1.0;
                    }
                }
            }
        }
    }
    VideoClip::new(fr, Some(ma), fl).unwrap()
}

// ---- independent oracles ----------------------------------------------------

/// Direct-formula SSIM of two equally sized patches (population moments),
/// written independently of the library's windowed implementation.
pub fn ssim_patch_oracle(x: &[f64], y: &[f64]) -> f64 {
    let c1 = 1e-4;
    let c2 = 9e-4;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let vx = x.iter().map(|v| (v - mx) * (v - mx)).sum::<f64>() / n;
    let vy = y.iter().map(|v| (v - my) * (v - my)).sum::<f64>() / n;
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / n;
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Mean SSIM-loss over all NxN unit-stride patches, brute force.
pub fn ssim_loss_oracle(s: &Array2<f64>, gt: &Array2<f64>, n: usize) -> f64 {
    let (h, w) = s.dim();
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=(h - n) {
        for ox in 0..=(w - n) {
            let mut xs = Vec::with_capacity(n * n);
            let mut ys = Vec::with_capacity(n * n);
            for dy in 0..n {
                for dx in 0..n {
                    xs.push(s[[oy + dy, ox + dx]]);
                    ys.push(gt[[oy + dy, ox + dx]]);
                }
            }
            total += ssim_patch_oracle(&xs, &ys);
            count += 1;
        }
    }
    1.0 - total / count as f64
}

/// Exhaustive 256-threshold max-F sweep with naive per-threshold counting.
pub fn max_f_oracle(s: &Array2<f64>, gt: &Array2<f64>) -> Option<f64> {
    let beta2 = 0.3;
    let total_pos = gt.iter().filter(|&&v| v >= 0.5).count();
    if total_pos == 0 {
        return None;
    }
    let mut best: f64 = 0.0;
    for i in 0..256 {
        let t = i as f64 / 255.0;
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (&sv, &gv) in s.iter().zip(gt.iter()) {
            if sv >= t {
                if gv >= 0.5 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        if tp + fp == 0 {
            continue; // zero predicted positives contributes F = 0
        }
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / total_pos as f64;
        if beta2 * p + r > 0.0 {
            best = best.max((1.0 + beta2) * p * r / (beta2 * p + r));
        }
    }
    Some(best)
}

/// Reference structural-measure implementation: a scalar-loop translation of
/// the published object/region formulation, kept separate from the library's
/// ndarray version.
pub mod smeasure_ref {
    use ndarray::Array2;

    fn mean(v: &[f64]) -> f64 {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    fn object(pred_vals: &[f64]) -> f64 {
        if pred_vals.is_empty() {
            return 0.0;
        }
        let x = mean(pred_vals);
        let n = pred_vals.len() as f64;
        let sigma = if pred_vals.len() > 1 {
            (pred_vals.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        2.0 * x / (x * x + 1.0 + sigma + f64::EPSILON)
    }

    fn s_object(pred: &Array2<f64>, gt: &Array2<f64>) -> f64 {
        let mut fg_vals = Vec::new();
        let mut bg_vals = Vec::new();
        for (p, g) in pred.iter().zip(gt.iter()) {
            if *g >= 0.5 {
                fg_vals.push(*p);
            } else {
                bg_vals.push(1.0 - *p);
            }
        }
        let u = fg_vals.len() as f64 / pred.len() as f64;
        u * object(&fg_vals) + (1.0 - u) * object(&bg_vals)
    }

    fn ssim_region(pred: &[f64], gt: &[f64]) -> f64 {
        let n = pred.len() as f64;
        if pred.is_empty() {
            return 1.0;
        }
        let x = mean(pred);
        let y = mean(gt);
        let d = n - 1.0 + f64::EPSILON;
        let sx = pred.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / d;
        let sy = gt.iter().map(|v| (v - y) * (v - y)).sum::<f64>() / d;
        let sxy = pred
            .iter()
            .zip(gt)
            .map(|(a, b)| (a - x) * (b - y))
            .sum::<f64>()
            / d;
        let alpha = 4.0 * x * y * sxy;
        let beta = (x * x + y * y) * (sx + sy);
        if alpha != 0.0 {
            alpha / (beta + f64::EPSILON)
        } else if beta == 0.0 {
            1.0
        } else {
            0.0
        }
    }

    fn s_region(pred: &Array2<f64>, gt: &Array2<f64>) -> f64 {
        let (h, w) = gt.dim();
        let mut area = 0usize;
        let mut sy = 0.0;
        let mut sx = 0.0;
        for ((y, x), &g) in gt.indexed_iter() {
            if g >= 0.5 {
                area += 1;
                sy += y as f64;
                sx += x as f64;
            }
        }
        let (cy, cx) = if area == 0 {
            (h / 2, w / 2)
        } else {
            (
                ((sy / area as f64).floor() as usize).min(h.saturating_sub(2)),
                ((sx / area as f64).floor() as usize).min(w.saturating_sub(2)),
            )
        };
        let blocks = [
            (0..cy + 1, 0..cx + 1),
            (0..cy + 1, cx + 1..w),
            (cy + 1..h, 0..cx + 1),
            (cy + 1..h, cx + 1..w),
        ];
        let mut q = 0.0;
        for (ys, xs) in blocks {
            let weight = (ys.len() * xs.len()) as f64 / (h * w) as f64;
            if weight == 0.0 {
                continue;
            }
            let mut pv = Vec::new();
            let mut gv = Vec::new();
            for y in ys.clone() {
                for x in xs.clone() {
                    pv.push(pred[[y, x]]);
                    gv.push(if gt[[y, x]] >= 0.5 { 1.0 } else { 0.0 });
                }
            }
            q += weight * ssim_region(&pv, &gv);
        }
        q
    }

    pub fn s_measure(pred: &Array2<f64>, gt: &Array2<f64>) -> f64 {
        let fg = gt.iter().filter(|&&g| g >= 0.5).count();
        let x = pred.iter().sum::<f64>() / pred.len() as f64;
        let q = if fg == 0 {
            1.0 - x
        } else if fg == gt.len() {
            x
        } else {
            0.5 * s_object(pred, gt) + 0.5 * s_region(pred, gt)
        };
        q.clamp(0.0, 1.0)
    }
}
