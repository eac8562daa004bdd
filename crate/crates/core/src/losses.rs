//! Hybrid training objective: pixel-level binary cross entropy, patch-level
//! SSIM, and object-level IoU, summed per branch and combined across the
//! spatial, temporal, and video branches.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};
use ndarray::{Array2, ArrayD, IxDyn};

/// SSIM stability constants (0.01^2 and 0.03^2).
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Side of the square SSIM patch window (unit stride).
    pub ssim_window: usize,
    /// Clamp for predictions inside the cross-entropy logarithms.
    pub bce_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            ssim_window: 11,
            bce_epsilon: 1e-7,
        }
    }
}

fn check_dims(g: &Graph, s: Var, gt: &Array2<f64>, context: &'static str) -> Result<(usize, usize)> {
    let sh = g.shape(s).to_vec();
    let (h, w) = gt.dim();
    if sh != vec![h, w] {
        return Err(Error::shape(context, format!("[{h},{w}]"), format!("{sh:?}")));
    }
    Ok((h, w))
}

fn gt_const(g: &mut Graph, gt: &Array2<f64>) -> Var {
    g.constant(gt.clone().into_dyn())
}

/// Pixel-level cross entropy, summed over pixels:
/// `-sum(GT*log S + (1-GT)*log(1-S))` with `S` clamped to `[eps, 1-eps]`.
pub fn bce_loss(g: &mut Graph, s: Var, gt: &Array2<f64>, eps: f64) -> Result<Var> {
    check_dims(g, s, gt, "bce loss")?;
    let gtv = gt_const(g, gt);
    let clamped = g.clamp(s, eps, 1.0 - eps);
    let log_s = g.ln(clamped);
    let one_minus = g.affine(clamped, -1.0, 1.0);
    let log_one_minus = g.ln(one_minus);
    let pos = g.mul(gtv, log_s);
    let gt_inv = g.affine(gtv, -1.0, 1.0);
    let negt = g.mul(gt_inv, log_one_minus);
    let both = g.add(pos, negt);
    let total = g.sum(both);
    Ok(g.affine(total, -1.0, 0.0))
}

/// Patch-level structural dissimilarity: `1 - mean over NxN patches of SSIM`.
/// Patch statistics use uniform windows and population moments.
pub fn ssim_loss(g: &mut Graph, s: Var, gt: &Array2<f64>, window: usize) -> Result<Var> {
    let (h, w) = check_dims(g, s, gt, "ssim loss")?;
    if window == 0 || h < window || w < window {
        return Err(Error::InvalidArgument(format!(
            "ssim window {window} larger than {h}x{w} image"
        )));
    }
    let gtv = gt_const(g, gt);
    let n2 = (window * window) as f64;
    let kernel = g.constant(ArrayD::from_elem(IxDyn(&[1, 1, window, window]), 1.0 / n2));

    let win_mean = |g: &mut Graph, x: Var| -> Var {
        let x3 = g.reshape(x, &[1, h, w]);
        let m = g.conv2d(x3, kernel, None, 1, 0, 1);
        let (oh, ow) = (h - window + 1, w - window + 1);
        g.reshape(m, &[oh, ow])
    };

    let mu_x = win_mean(g, s);
    let mu_y = win_mean(g, gtv);
    let xx = g.mul(s, s);
    let yy = g.mul(gtv, gtv);
    let xy = g.mul(s, gtv);
    let mu_xx = win_mean(g, xx);
    let mu_yy = win_mean(g, yy);
    let mu_xy = win_mean(g, xy);

    let mu_x2 = g.mul(mu_x, mu_x);
    let mu_y2 = g.mul(mu_y, mu_y);
    let mu_x_mu_y = g.mul(mu_x, mu_y);
    let var_x = g.sub(mu_xx, mu_x2);
    let var_y = g.sub(mu_yy, mu_y2);
    let cov = g.sub(mu_xy, mu_x_mu_y);

    let a1 = g.affine(mu_x_mu_y, 2.0, SSIM_C1);
    let a2 = g.affine(cov, 2.0, SSIM_C2);
    let b1_sum = g.add(mu_x2, mu_y2);
    let b1 = g.affine(b1_sum, 1.0, SSIM_C1);
    let b2_sum = g.add(var_x, var_y);
    let b2 = g.affine(b2_sum, 1.0, SSIM_C2);

    let num = g.mul(a1, a2);
    let den = g.mul(b1, b2);
    let ssim_map = g.div(num, den);
    let mean = g.mean(ssim_map);
    Ok(g.affine(mean, -1.0, 1.0))
}

/// Object-level loss: `1 - sum(S*GT) / sum(S + GT - S*GT)`. By convention the
/// all-empty case (denominator zero) scores 0, perfect agreement.
pub fn iou_loss(g: &mut Graph, s: Var, gt: &Array2<f64>) -> Result<Var> {
    check_dims(g, s, gt, "iou loss")?;
    let gtv = gt_const(g, gt);
    let inter_map = g.mul(s, gtv);
    let sum_map = g.add(s, gtv);
    let union_map = g.sub(sum_map, inter_map);
    let union = g.sum(union_map);
    if g.scalar_value(union) == 0.0 {
        return Ok(g.scalar(0.0));
    }
    let inter = g.sum(inter_map);
    let ratio = g.div(inter, union);
    Ok(g.affine(ratio, -1.0, 1.0))
}

/// One branch's hybrid objective and its components.
pub struct HybridLoss {
    pub total: Var,
    pub bce: Var,
    pub ssim: Var,
    pub iou: Var,
}

/// `bce + ssim + iou` for one prediction/ground-truth pair.
pub fn hybrid_loss(g: &mut Graph, s: Var, gt: &Array2<f64>, cfg: &LossConfig) -> Result<HybridLoss> {
    let bce = bce_loss(g, s, gt, cfg.bce_epsilon)?;
    let ssim = ssim_loss(g, s, gt, cfg.ssim_window)?;
    let iou = iou_loss(g, s, gt)?;
    let bs = g.add(bce, ssim);
    let total = g.add(bs, iou);
    Ok(HybridLoss {
        total,
        bce,
        ssim,
        iou,
    })
}

/// Loss components of one branch, averaged over the frames of a clip.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BranchLoss {
    pub bce: f64,
    pub ssim: f64,
    pub iou: f64,
    pub total: f64,
}

/// Per-branch components plus the grand total of the training objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub spatial: BranchLoss,
    pub temporal: BranchLoss,
    pub video: BranchLoss,
    pub total: f64,
}

/// Combines per-frame branch predictions into the full objective
/// `L = l(S^s,GT) + l(S^t,GT) + l(S^v,GT)`, each branch term averaged over
/// frames. Returns the differentiable total plus a numeric breakdown.
pub fn total_loss(
    g: &mut Graph,
    spatial: &[Var],
    temporal: &[Var],
    video: &[Var],
    gts: &[Array2<f64>],
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    let n = gts.len();
    if n == 0 || spatial.len() != n || temporal.len() != n || video.len() != n {
        return Err(Error::InvalidArgument(format!(
            "total loss: {} gts vs {}/{}/{} branch predictions",
            n,
            spatial.len(),
            temporal.len(),
            video.len()
        )));
    }
    let mut breakdown = LossBreakdown::default();
    let mut branch_totals = Vec::with_capacity(3);
    for (preds, slot) in [
        (spatial, 0usize),
        (temporal, 1),
        (video, 2),
    ] {
        let mut acc: Option<Var> = None;
        let mut parts = BranchLoss::default();
        for (&p, gt) in preds.iter().zip(gts) {
            let l = hybrid_loss(g, p, gt, cfg)?;
            parts.bce += g.scalar_value(l.bce);
            parts.ssim += g.scalar_value(l.ssim);
            parts.iou += g.scalar_value(l.iou);
            acc = Some(match acc {
                Some(a) => g.add(a, l.total),
                None => l.total,
            });
        }
        let scale = 1.0 / n as f64;
        let branch_mean = g.affine(acc.unwrap(), scale, 0.0);
        parts.bce *= scale;
        parts.ssim *= scale;
        parts.iou *= scale;
        parts.total = g.scalar_value(branch_mean);
        match slot {
            0 => breakdown.spatial = parts,
            1 => breakdown.temporal = parts,
            _ => breakdown.video = parts,
        }
        branch_totals.push(branch_mean);
    }
    let st = g.add(branch_totals[0], branch_totals[1]);
    let total = g.add(st, branch_totals[2]);
    breakdown.total = g.scalar_value(total);
    Ok((total, breakdown))
}
