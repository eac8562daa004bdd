//! Feature-activation excitation, the curriculum rate schedule, and
//! excitation-map construction.
//!
//! The excitation operator blends a feature tensor `M` with its map-gated
//! version: `beta * E (.) M + (1 - beta) * M`, where `beta` is a learnable
//! rate in `(0,1)` and `E` is a `[0,1]` map broadcast across channels.
//! During training the map is a curriculum mix `alpha * GT + (1 - alpha) * S`
//! that hands off from ground truth to the branch-predicted complementary map
//! `S` as `alpha` decays over three stages.

use crate::error::{Error, Result};
use crate::tensor::{bilinear_resize_raw, Graph, ResizePlan, Var};
use ndarray::Array2;

/// Learnable excitation rate. The raw value is unconstrained; the effective
/// rate is `logistic(raw)`, so it stays inside `(0,1)` for every finite raw
/// value and under every optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcitationRate {
    pub raw: f64,
}

impl ExcitationRate {
    /// Rate with `effective() == 0.5`.
    pub fn balanced() -> Self {
        ExcitationRate { raw: 0.0 }
    }

    pub fn effective(&self) -> f64 {
        // The logistic saturates to exactly 0.0/1.0 in f64 for |raw| beyond
        // ~37; clamp to the nearest representable open-interval values so the
        // (0,1) invariant survives extreme raw values too.
        let sig = 1.0 / (1.0 + (-self.raw).exp());
        sig.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
    }
}

/// Curriculum position for one training epoch.
///
/// Stage 1 (`e <= 2`): excitation maps equal ground truth (`alpha = 1`).
/// Stage 2 (`2 < e <= 10`): `alpha` follows a half-cosine decay to zero.
/// Stage 3 (`e > 10`): maps equal the complementary prediction (`alpha = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumState {
    pub epoch: u32,
    pub alpha: f64,
    pub stage: u8,
}

impl CurriculumState {
    pub fn for_epoch(epoch: u32) -> Self {
        assert!(epoch >= 1, "epochs are 1-based");
        let stage = if epoch <= 2 {
            1
        } else if epoch <= 10 {
            2
        } else {
            3
        };
        CurriculumState {
            epoch,
            alpha: curriculum_alpha(epoch),
            stage,
        }
    }
}

/// Curriculum rate for a 1-based epoch: 1 through epoch 2, half-cosine decay
/// over epochs 2..10, 0 afterwards.
pub fn curriculum_alpha(epoch: u32) -> f64 {
    assert!(epoch >= 1, "epochs are 1-based");
    if epoch <= 2 {
        1.0
    } else if epoch <= 10 {
        0.5 * (1.0 + (std::f64::consts::PI * (epoch - 2) as f64 / 8.0).cos())
    } else {
        0.0
    }
}

/// Builds an excitation map `E = alpha * GT + (1 - alpha) * S`.
///
/// The endpoints are special-cased so stage 1 returns `GT` and stage 3
/// returns `S` bit-exactly.
pub fn make_excitation_map(
    gt: Option<&Array2<f64>>,
    complementary: &Array2<f64>,
    alpha: f64,
) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0,1]")));
    }
    let s = complementary.mapv(|v| v.clamp(0.0, 1.0));
    if alpha == 0.0 {
        return Ok(s);
    }
    let gt = gt.ok_or(Error::MissingGroundTruth { alpha })?;
    if gt.dim() != complementary.dim() {
        return Err(Error::shape(
            "excitation map",
            format!("{:?}", gt.dim()),
            format!("{:?}", complementary.dim()),
        ));
    }
    if alpha == 1.0 {
        return Ok(gt.clone());
    }
    Ok(gt.mapv(|v| alpha * v) + s.mapv(|v| (1.0 - alpha) * v))
}

/// Bilinear downsampling of an excitation map to the latent resolution.
pub fn downsample_map(map: &Array2<f64>, target: (usize, usize)) -> Result<Array2<f64>> {
    let (sh, sw) = map.dim();
    let (th, tw) = target;
    if th == 0 || tw == 0 || th > sh || tw > sw {
        return Err(Error::InvalidArgument(format!(
            "downsample target {th}x{tw} invalid for {sh}x{sw} map"
        )));
    }
    let plan = ResizePlan::new(sh, sw, th, tw);
    let src = map.as_standard_layout();
    let out = bilinear_resize_raw(src.as_slice().unwrap(), 1, &plan);
    Ok(Array2::from_shape_vec((th, tw), out).unwrap())
}

/// Excites feature activations: `beta * E (.) M + (1 - beta) * M`.
///
/// `m` is rank 3 `[C,H,W]` (or rank 2, treated as a single channel), `e` is a
/// `[H,W]` map broadcast across channels, and `beta` is a rank-0 node holding
/// a value in `[0,1]`. Differentiable in all three inputs.
pub fn excite(g: &mut Graph, m: Var, e: Var, beta: Var) -> Result<Var> {
    let msh = g.shape(m).to_vec();
    let esh = g.shape(e).to_vec();
    let spatial_ok = match msh.len() {
        3 => esh == msh[1..],
        2 => esh == msh,
        _ => false,
    };
    if !spatial_ok || !g.shape(beta).is_empty() {
        return Err(Error::shape(
            "excite",
            format!("map matching {msh:?} plus scalar rate"),
            format!("map {esh:?}"),
        ));
    }
    let gated = if msh.len() == 3 {
        g.bmul_map(m, e)
    } else {
        g.mul(m, e)
    };
    let excited = g.smul(beta, gated);
    let complement = g.affine(beta, -1.0, 1.0);
    let residual = g.smul(complement, m);
    Ok(g.add(excited, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr0, arr2};

    #[test]
    fn beta_zero_returns_input_exactly() {
        let mut g = Graph::new();
        let m = g.leaf(arr2(&[[2.0, -4.0], [0.5, 1.5]]).into_dyn());
        let e = g.constant(arr2(&[[0.3, 0.9], [0.0, 1.0]]).into_dyn());
        let beta = g.constant(arr0(0.0).into_dyn());
        let out = excite(&mut g, m, e, beta).unwrap();
        assert_eq!(g.value(out), g.value(m));
    }

    #[test]
    fn map_of_ones_returns_input() {
        let mut g = Graph::new();
        let m = g.leaf(arr2(&[[2.0, -4.0], [0.5, 1.5]]).into_dyn());
        let e = g.constant(arr2(&[[1.0, 1.0], [1.0, 1.0]]).into_dyn());
        let beta = g.constant(arr0(0.7).into_dyn());
        let out = excite(&mut g, m, e, beta).unwrap();
        let diff = (g.value(out) - g.value(m)).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(diff < 1e-15);
    }

    #[test]
    fn elementwise_evaluation() {
        // M=[2,-4], E=[1,0.5], beta=0.5 -> [2,-3]
        let mut g = Graph::new();
        let m = g.leaf(arr2(&[[2.0, -4.0]]).into_dyn());
        let e = g.constant(arr2(&[[1.0, 0.5]]).into_dyn());
        let beta = g.constant(arr0(0.5).into_dyn());
        let out = excite(&mut g, m, e, beta).unwrap();
        let v = g.value(out);
        assert!((v[[0, 0]] - 2.0).abs() < 1e-15);
        assert!((v[[0, 1]] + 3.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut g = Graph::new();
        let m = g.leaf(arr2(&[[2.0, -4.0]]).into_dyn());
        let e = g.constant(arr2(&[[1.0], [0.5]]).into_dyn());
        let beta = g.constant(arr0(0.5).into_dyn());
        assert!(excite(&mut g, m, e, beta).is_err());
    }

    #[test]
    fn alpha_endpoints_and_midpoint() {
        assert_eq!(curriculum_alpha(1), 1.0);
        assert_eq!(curriculum_alpha(2), 1.0);
        assert!((curriculum_alpha(6) - 0.5).abs() < 1e-12);
        assert!(curriculum_alpha(10).abs() < 1e-15);
        assert_eq!(curriculum_alpha(11), 0.0);
        assert_eq!(curriculum_alpha(15), 0.0);
    }

    #[test]
    fn alpha_is_nonincreasing_and_continuous_at_boundaries() {
        let mut prev = f64::INFINITY;
        for e in 1..=20 {
            let a = curriculum_alpha(e);
            assert!((0.0..=1.0).contains(&a));
            assert!(a <= prev + 1e-15);
            prev = a;
        }
        // Continuity at the stage boundaries: the cosine formula evaluated at
        // e = 2 gives 1 and at e = 10 gives 0.
        let cos_at = |e: f64| 0.5 * (1.0 + (std::f64::consts::PI * (e - 2.0) / 8.0).cos());
        assert!((cos_at(2.0) - 1.0).abs() < 1e-15);
        assert!(cos_at(10.0).abs() < 1e-15);
    }

    #[test]
    fn curriculum_state_stages() {
        assert_eq!(CurriculumState::for_epoch(1).stage, 1);
        assert_eq!(CurriculumState::for_epoch(2).stage, 1);
        assert_eq!(CurriculumState::for_epoch(3).stage, 2);
        assert_eq!(CurriculumState::for_epoch(10).stage, 2);
        assert_eq!(CurriculumState::for_epoch(11).stage, 3);
        assert_eq!(CurriculumState::for_epoch(1).alpha, 1.0);
        assert_eq!(CurriculumState::for_epoch(11).alpha, 0.0);
    }

    #[test]
    fn excitation_map_endpoints_are_bit_exact() {
        let gt = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let s = arr2(&[[0.25, 0.75], [0.5, 0.125]]);
        assert_eq!(make_excitation_map(Some(&gt), &s, 1.0).unwrap(), gt);
        assert_eq!(make_excitation_map(Some(&gt), &s, 0.0).unwrap(), s);
        assert_eq!(make_excitation_map(None, &s, 0.0).unwrap(), s);
    }

    #[test]
    fn excitation_map_blend() {
        // alpha=0.25, GT=1, S=0.2 -> E=0.4
        let gt = arr2(&[[1.0]]);
        let s = arr2(&[[0.2]]);
        let e = make_excitation_map(Some(&gt), &s, 0.25).unwrap();
        assert!((e[[0, 0]] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn missing_gt_with_positive_alpha_errors() {
        let s = arr2(&[[0.2]]);
        assert!(matches!(
            make_excitation_map(None, &s, 0.5),
            Err(Error::MissingGroundTruth { .. })
        ));
    }

    #[test]
    fn downsample_identity_and_constant() {
        let m = arr2(&[[0.1, 0.9], [0.4, 0.7]]);
        assert_eq!(downsample_map(&m, (2, 2)).unwrap(), m);
        let c = Array2::from_elem((6, 6), 0.3);
        let d = downsample_map(&c, (2, 3)).unwrap();
        assert!(d.iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn downsample_checkerboard_to_single_pixel_gives_mean() {
        let m = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let d = downsample_map(&m, (1, 1)).unwrap();
        assert_eq!(d[[0, 0]], 0.5);
    }

    #[test]
    fn downsample_invalid_target_errors() {
        let m = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        assert!(downsample_map(&m, (3, 1)).is_err());
        assert!(downsample_map(&m, (0, 1)).is_err());
    }

    #[test]
    fn rate_stays_in_open_unit_interval() {
        for raw in [-1e6, -5.0, 0.0, 5.0, 1e6] {
            let b = ExcitationRate { raw }.effective();
            assert!(b > 0.0 && b < 1.0, "raw {raw} -> {b}");
        }
        assert_eq!(ExcitationRate::balanced().effective(), 0.5);
    }
}
