//! Video salient object detection with spatial/temporal feature excitation.
//!
//! The model gates feature activations with [0,1] excitation maps blended by
//! learnable rates. During training the maps follow a three-stage curriculum
//! that hands off from ground truth to branch-predicted complementary maps;
//! at inference the maps can be refined online by feeding the network's own
//! video predictions back in, without retraining.
//!
//! Crate layout:
//! - [`tensor`]: reverse-mode autodiff over f64 arrays (tape, conv, resize)
//! - [`data`]: domain types, synthetic dataset generator, flow codec, IO
//! - [`excitation`]: the excitation operator and curriculum schedule
//! - [`backbone`]: dilated residual encoder, decoder, ConvLSTM
//! - [`model`]: the assembled three-branch network
//! - [`losses`] / [`metrics`]: training objective and evaluation measures
//! - [`train`] / [`infer`] / [`checkpoint`] / [`config`]: the harness

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod excitation;
pub mod infer;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointRecord};
pub use config::{ConfigFile, TrainConfig, SEED_ENV_VAR};
pub use data::{
    generate_synthetic_dataset, load_clip, preprocess, read_flow, write_flow, DatasetSpec,
    FlowField, VideoClip,
};
pub use error::{Error, Result};
pub use excitation::{curriculum_alpha, make_excitation_map, CurriculumState, ExcitationRate};
pub use infer::{infer_clip, predict_dataset, InferOptions};
pub use metrics::{evaluate_dataset, mae, max_f_beta, s_measure, MetricReport};
pub use model::{ExcitationNet, ForwardOptions, FrameOutputs, MapMode, ModelConfig, OnlineSource};
pub use train::{train, TrainOutcome};
