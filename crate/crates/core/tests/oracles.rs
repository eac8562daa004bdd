//! Derived-value checks against independent oracles, one test per check.

mod common;

use common::oracle_suite;

macro_rules! oracle_test {
    ($name:ident) => {
        #[test]
        fn $name() {
            oracle_suite::$name();
        }
    };
}

oracle_test!(flow_file_byte_layout);
oracle_test!(generator_flow_is_the_analytic_motion_model);
oracle_test!(loader_zero_flow_fallback);
oracle_test!(excite_elementwise_value);
oracle_test!(curriculum_midpoint_value);
oracle_test!(excitation_map_blend_value);
oracle_test!(checkerboard_downsample_value);
oracle_test!(convlstm_zero_case);
oracle_test!(bce_single_pixel_values);
oracle_test!(ssim_constant_patch_value);
oracle_test!(ssim_matches_direct_formula_oracle);
oracle_test!(iou_half_coverage_value);
oracle_test!(total_loss_recomposition_oracle);
oracle_test!(mae_matches_elementwise_oracle);
oracle_test!(max_f_half_precision_value);
oracle_test!(max_f_matches_exhaustive_sweep_oracle);
oracle_test!(s_measure_matches_reference_implementation);
oracle_test!(final_learning_rate_value);
