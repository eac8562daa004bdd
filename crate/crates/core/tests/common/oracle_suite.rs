//! Brute-force oracle checks for every derived expected value: each check
//! first computes the expectation by direct formula evaluation, exhaustive
//! enumeration, or a reference implementation, then asserts the library
//! matches it. Shared between the focused oracle tests and the acceptance
//! suite.

use super::{max_f_oracle, random_map, smeasure_ref, ssim_loss_oracle};
use ndarray::{arr0, arr2, Array2};
use vsod_core::excitation::{curriculum_alpha, downsample_map, excite, make_excitation_map};
use vsod_core::losses::{bce_loss, iou_loss, ssim_loss, total_loss, hybrid_loss, LossConfig};
use vsod_core::metrics::{mae, max_f_beta, s_measure};
use vsod_core::optim::cosine_lr;
use vsod_core::params::Bound;
use vsod_core::tensor::Graph;
use vsod_core::{generate_synthetic_dataset, load_clip, write_flow, DatasetSpec, FlowField};

const CLOSED_FORM_TOL: f64 = 1e-6;
const S_MEASURE_TOL: f64 = 1e-4;

pub fn flow_file_byte_layout() {
    // 1x1 field: 4 (magic) + 4 (width) + 4 (height) + 2*4 (u,v) = 20 bytes.
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("one.flo");
    let field = FlowField::new(arr2(&[[2.0]]), arr2(&[[-1.0]])).unwrap();
    write_flow(&field, &p).unwrap();
    assert_eq!(std::fs::metadata(&p).unwrap().len(), 20);
}

pub fn generator_flow_is_the_analytic_motion_model() {
    // A single moving shape: every pixel it covers in frame n carries exactly
    // the shape's displacement from frame n-1, the background carries zero.
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        seed: 77,
        num_clips: 1,
        frames_per_clip: 5,
        image_size: (32, 32),
        moving_shapes: 1,
        distractor_shapes: 1,
        velocity_range: (2.0, 2.0),
        target_foreground_fraction: 0.08,
    };
    generate_synthetic_dataset(&spec, dir.path()).unwrap();
    let clip = load_clip(&dir.path().join("clip_000")).unwrap();
    let masks = clip.masks.as_ref().unwrap();
    for f in 1..clip.len() {
        let mut displacement: Option<(f64, f64)> = None;
        for y in 0..32 {
            for x in 0..32 {
                let flow = (clip.flows[[f, y, x, 0]], clip.flows[[f, y, x, 1]]);
                if masks[[f, y, x]] == 1.0 {
                    match displacement {
                        None => {
                            assert!(flow.0.hypot(flow.1) >= 1.0);
                            displacement = Some(flow);
                        }
                        Some(d) => assert_eq!(flow, d),
                    }
                } else {
                    assert_eq!(flow, (0.0, 0.0));
                }
            }
        }
        assert!(displacement.is_some());
    }
}

pub fn loader_zero_flow_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        seed: 3,
        num_clips: 1,
        frames_per_clip: 3,
        image_size: (16, 16),
        ..DatasetSpec::default()
    };
    generate_synthetic_dataset(&spec, dir.path()).unwrap();
    std::fs::remove_dir_all(dir.path().join("clip_000/flow")).unwrap();
    let clip = load_clip(&dir.path().join("clip_000")).unwrap();
    assert!(clip.flow_fallback);
    assert!(clip.flows.iter().all(|&v| v == 0.0));
}

pub fn excite_elementwise_value() {
    // Direct evaluation: 0.5*1*2 + 0.5*2 = 2; 0.5*0.5*(-4) + 0.5*(-4) = -3.
    let mut g = Graph::new();
    let m = g.leaf(arr2(&[[2.0, -4.0]]).into_dyn());
    let e = g.constant(arr2(&[[1.0, 0.5]]).into_dyn());
    let b = g.constant(arr0(0.5).into_dyn());
    let out = excite(&mut g, m, e, b).unwrap();
    assert!((g.value(out)[[0, 0]] - 2.0).abs() < CLOSED_FORM_TOL);
    assert!((g.value(out)[[0, 1]] - (-3.0)).abs() < CLOSED_FORM_TOL);
}

pub fn curriculum_midpoint_value() {
    // 0.5*(1 + cos(pi*(6-2)/8)) = 0.5*(1 + cos(pi/2)) = 0.5.
    let direct = 0.5 * (1.0 + (std::f64::consts::PI * 4.0 / 8.0).cos());
    assert!((curriculum_alpha(6) - direct).abs() < 1e-12);
    assert!((curriculum_alpha(6) - 0.5).abs() < 1e-12);
}

pub fn excitation_map_blend_value() {
    // 0.25*1 + 0.75*0.2 = 0.4.
    let gt = Array2::from_elem((3, 3), 1.0);
    let s = Array2::from_elem((3, 3), 0.2);
    let e = make_excitation_map(Some(&gt), &s, 0.25).unwrap();
    assert!(e.iter().all(|&v| (v - 0.4).abs() < CLOSED_FORM_TOL));
}

pub fn checkerboard_downsample_value() {
    // Bilinear taps at the 1x1 center weight all four pixels by 1/4.
    let m = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
    let d = downsample_map(&m, (1, 1)).unwrap();
    assert!((d[[0, 0]] - 0.5).abs() < CLOSED_FORM_TOL);
}

pub fn convlstm_zero_case() {
    // Hand evaluation with zero weights/bias/state: i=f=o=0.5, g=0
    // => c' = 0.5*0 + 0.5*0 = 0, h' = 0.5*tanh(0) = 0.
    use rand::SeedableRng;
    let mut store = vsod_core::params::ParamStore::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let cell = vsod_core::backbone::ConvLstm::new(&mut store, &mut rng, "z", 2, 3);
    for e in store.entries_mut() {
        e.value.fill(0.0);
    }
    let mut g = Graph::new();
    let bound = Bound::bind(&mut g, &store, false);
    let x = g.constant(super::random_tensor(&[2, 4, 4], 5, 1.0));
    let s0 = cell.zero_state(&mut g, 4, 4);
    let s1 = cell.step(&mut g, &bound, x, s0).unwrap();
    assert!(g.value(s1.hidden).iter().all(|&v| v == 0.0));
    assert!(g.value(s1.cell).iter().all(|&v| v == 0.0));
}

pub fn bce_single_pixel_values() {
    // Direct evaluation of the cross-entropy at S=0.5: ln 2 either way.
    for gt_val in [1.0, 0.0] {
        let mut g = Graph::new();
        let s = g.leaf(arr2(&[[0.5]]).into_dyn());
        let l = bce_loss(&mut g, s, &arr2(&[[gt_val]]), 1e-7).unwrap();
        assert!((g.scalar_value(l) - std::f64::consts::LN_2).abs() < CLOSED_FORM_TOL);
    }
}

pub fn ssim_constant_patch_value() {
    // Zero variances: SSIM = c1*c2 / ((1+c1)*c2) = c1/(1+c1).
    let direct = 1.0 - 1e-4 / (1.0 + 1e-4);
    let zeros = Array2::zeros((11, 11));
    let ones = Array2::from_elem((11, 11), 1.0);
    let mut g = Graph::new();
    let s = g.leaf(zeros.into_dyn());
    let l = ssim_loss(&mut g, s, &ones, 11).unwrap();
    assert!((g.scalar_value(l) - direct).abs() < CLOSED_FORM_TOL);
}

pub fn ssim_matches_direct_formula_oracle() {
    let s = random_map(11, 11, 101);
    let gt = random_map(11, 11, 102);
    let oracle = ssim_loss_oracle(&s, &gt, 11);
    let mut g = Graph::new();
    let sv = g.leaf(s.into_dyn());
    let l = ssim_loss(&mut g, sv, &gt, 11).unwrap();
    assert!((g.scalar_value(l) - oracle).abs() < 1e-6);
    // Also on a larger map with several patches.
    let s = random_map(16, 14, 103);
    let gt = random_map(16, 14, 104).mapv(|v| f64::from(u8::from(v > 0.5)));
    let oracle = ssim_loss_oracle(&s, &gt, 11);
    let mut g = Graph::new();
    let sv = g.leaf(s.into_dyn());
    let l = ssim_loss(&mut g, sv, &gt, 11).unwrap();
    assert!((g.scalar_value(l) - oracle).abs() < 1e-6);
}

pub fn iou_half_coverage_value() {
    // 1 - 0.5wh/wh = 0.5.
    let mut g = Graph::new();
    let s = g.leaf(Array2::from_elem((4, 6), 1.0).into_dyn());
    let gt = Array2::from_shape_fn((4, 6), |(y, _)| f64::from(u8::from(y < 2)));
    let l = iou_loss(&mut g, s, &gt).unwrap();
    assert!((g.scalar_value(l) - 0.5).abs() < CLOSED_FORM_TOL);
}

pub fn total_loss_recomposition_oracle() {
    let cfg = LossConfig {
        ssim_window: 5,
        ..LossConfig::default()
    };
    let gts: Vec<Array2<f64>> = (0..3)
        .map(|i| random_map(8, 8, 200 + i).mapv(|v| f64::from(u8::from(v > 0.5))))
        .collect();
    let s: Vec<Array2<f64>> = (0..3).map(|i| random_map(8, 8, 210 + i)).collect();
    let t: Vec<Array2<f64>> = (0..3).map(|i| random_map(8, 8, 220 + i)).collect();
    let v: Vec<Array2<f64>> = (0..3).map(|i| random_map(8, 8, 230 + i)).collect();

    // Oracle: per-branch means of independently computed hybrid losses.
    let hand = |preds: &[Array2<f64>]| -> f64 {
        let mut total = 0.0;
        for (p, gt) in preds.iter().zip(&gts) {
            let mut g = Graph::new();
            let pv = g.leaf(p.clone().into_dyn());
            let loss = hybrid_loss(&mut g, pv, gt, &cfg).unwrap().total;
            total += g.scalar_value(loss);
        }
        total / preds.len() as f64
    };
    let expected = hand(&s) + hand(&t) + hand(&v);

    let mut g = Graph::new();
    let mk = |g: &mut Graph, arrs: &[Array2<f64>]| -> Vec<vsod_core::tensor::Var> {
        arrs.iter().map(|a| g.leaf(a.clone().into_dyn())).collect()
    };
    let sv = mk(&mut g, &s);
    let tv = mk(&mut g, &t);
    let vv = mk(&mut g, &v);
    let (_, breakdown) = total_loss(&mut g, &sv, &tv, &vv, &gts, &cfg).unwrap();
    assert!((breakdown.total - expected).abs() < 1e-9);
}

pub fn mae_matches_elementwise_oracle() {
    let s = random_map(9, 13, 301);
    let gt = random_map(9, 13, 302);
    let mut acc = 0.0;
    for (a, b) in s.iter().zip(gt.iter()) {
        acc += (a - b).abs();
    }
    let oracle = acc / (9.0 * 13.0);
    assert!((mae(&s, &gt).unwrap() - oracle).abs() < 1e-9);
}

pub fn max_f_half_precision_value() {
    // Direct evaluation: F = 1.3*0.5*1/(0.3*0.5+1) = 0.5652...
    let mut gt = Array2::zeros((4, 4));
    let mut s = Array2::zeros((4, 4));
    for x in 0..4 {
        gt[[0, x]] = 1.0;
        s[[0, x]] = 0.8;
        s[[1, x]] = 0.8;
    }
    let direct = 1.3 * 0.5 / (0.3 * 0.5 + 1.0);
    assert!((max_f_beta(&s, &gt).unwrap() - direct).abs() < 1e-9);
}

pub fn max_f_matches_exhaustive_sweep_oracle() {
    for seed in 0..4 {
        let s = random_map(12, 10, 400 + seed);
        let gt = random_map(12, 10, 410 + seed).mapv(|v| f64::from(u8::from(v > 0.6)));
        match max_f_oracle(&s, &gt) {
            Some(oracle) => {
                assert!((max_f_beta(&s, &gt).unwrap() - oracle).abs() < 1e-9);
            }
            None => assert!(max_f_beta(&s, &gt).is_err()),
        }
    }
}

pub fn s_measure_matches_reference_implementation() {
    // Perfect prediction scores 1 by the reference route.
    let gt = Array2::from_shape_fn((14, 14), |(y, x)| {
        f64::from(u8::from((4..9).contains(&y) && (3..10).contains(&x)))
    });
    let ref_perfect = smeasure_ref::s_measure(&gt, &gt);
    assert!((ref_perfect - 1.0).abs() < S_MEASURE_TOL);
    assert!((s_measure(&gt, &gt).unwrap() - ref_perfect).abs() < S_MEASURE_TOL);

    // Inverted prediction scores near zero.
    let inv = gt.mapv(|v| 1.0 - v);
    let ref_inv = smeasure_ref::s_measure(&inv, &gt);
    let lib_inv = s_measure(&inv, &gt).unwrap();
    assert!(ref_inv < 0.15);
    assert!((lib_inv - ref_inv).abs() < S_MEASURE_TOL);

    // Random maps agree with the reference route.
    for seed in 0..4 {
        let s = random_map(14, 14, 500 + seed);
        let g = random_map(14, 14, 510 + seed).mapv(|v| f64::from(u8::from(v > 0.55)));
        let reference = smeasure_ref::s_measure(&s, &g);
        assert!((s_measure(&s, &g).unwrap() - reference).abs() < S_MEASURE_TOL);
    }
}

pub fn final_learning_rate_value() {
    // The cosine schedule lands exactly on lr_final at the last step.
    let lr = cosine_lr(999, 1000, 5e-4, 1e-6);
    assert!((lr - 1e-6).abs() < 1e-9);
}

/// Every derived-value oracle check, for the timed acceptance run.
#[allow(clippy::type_complexity)]
pub fn all_checks() -> Vec<(&'static str, fn())> {
    vec![
        ("flow file byte layout", flow_file_byte_layout),
        ("generator analytic flow", generator_flow_is_the_analytic_motion_model),
        ("loader zero-flow fallback", loader_zero_flow_fallback),
        ("excite elementwise value", excite_elementwise_value),
        ("curriculum midpoint", curriculum_midpoint_value),
        ("excitation map blend", excitation_map_blend_value),
        ("checkerboard downsample", checkerboard_downsample_value),
        ("convlstm zero case", convlstm_zero_case),
        ("bce single pixel", bce_single_pixel_values),
        ("ssim constant patch", ssim_constant_patch_value),
        ("ssim direct-formula oracle", ssim_matches_direct_formula_oracle),
        ("iou half coverage", iou_half_coverage_value),
        ("total loss recomposition", total_loss_recomposition_oracle),
        ("mae elementwise oracle", mae_matches_elementwise_oracle),
        ("max-F direct value", max_f_half_precision_value),
        ("max-F exhaustive sweep oracle", max_f_matches_exhaustive_sweep_oracle),
        ("s-measure reference implementation", s_measure_matches_reference_implementation),
        ("final learning rate", final_learning_rate_value),
    ]
}
