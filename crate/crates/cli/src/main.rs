//! Command-line front end: dataset generation, training, inference with
//! online excitation, and metric evaluation.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use vsod_core::{
    evaluate_dataset, generate_synthetic_dataset, load_checkpoint, predict_dataset, train,
    ConfigFile, InferOptions, SEED_ENV_VAR,
};

#[derive(Parser)]
#[command(name = "vsod", version, about = "Excitation-gated video salient object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Plain-text `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed (takes precedence over TENET_SEED).
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn seed_override(&self) -> Option<String> {
        self.seed
            .map(|s| s.to_string())
            .or_else(|| std::env::var(SEED_ENV_VAR).ok())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic moving-shapes dataset.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output dataset root.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the model and write checkpoints plus a loss log.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for checkpoints and the loss log.
        #[arg(long, default_value = "train_out")]
        out: PathBuf,
    },
    /// Run inference with online excitation over a dataset tree.
    Infer {
        /// Checkpoint produced by `train`.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset root holding the clips to predict.
        #[arg(long)]
        data: PathBuf,
        /// Output root for predicted masks (mirrors the dataset layout).
        #[arg(long)]
        out: PathBuf,
        /// Online excitation iterations (0 = plain forward pass).
        #[arg(long, default_value_t = 20)]
        online_iters: usize,
        /// Optional config file; supplies `online_source` and `excitation`.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate predictions against ground truth and print a metric report.
    Eval {
        /// Root of predicted masks.
        #[arg(long)]
        pred: PathBuf,
        /// Root of ground-truth masks.
        #[arg(long)]
        gt: PathBuf,
        /// Optional directory that receives `metrics.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::GenData { config, out } => {
            let file = ConfigFile::load(&config.config)
                .with_context(|| format!("loading {}", config.config.display()))?;
            let spec = file.dataset_spec_with_env(config.seed_override().as_deref())?;
            let manifest = generate_synthetic_dataset(&spec, &out)?;
            println!(
                "generated {} clips x {} frames under {}",
                manifest.clips.len(),
                spec.frames_per_clip,
                out.display()
            );
        }
        Command::Train { config, out } => {
            let file = ConfigFile::load(&config.config)
                .with_context(|| format!("loading {}", config.config.display()))?;
            let cfg = file.train_config_with_env(config.seed_override().as_deref())?;
            let outcome = train(&cfg, &out)?;
            let last = outcome
                .epoch_video_loss
                .last()
                .copied()
                .unwrap_or(f64::NAN);
            println!(
                "trained {} epochs; final epoch video loss {:.4}; checkpoint at {}",
                cfg.epochs,
                last,
                outcome.checkpoint_path.display()
            );
        }
        Command::Infer {
            ckpt,
            data,
            out,
            online_iters,
            config,
        } => {
            let record = load_checkpoint(&ckpt)?;
            let mut opts = InferOptions {
                online_iters,
                ..InferOptions::default()
            };
            if let Some(path) = config {
                let file = ConfigFile::load(&path).with_context(|| format!("loading {}", path.display()))?;
                let cfg = file.train_config_with_env(None)?;
                opts.source = cfg.online_source;
                opts.excitation = cfg.excitation;
            }
            let clips = predict_dataset(&record, &data, &out, &opts)?;
            println!(
                "predicted {} clips with {} online iterations under {}",
                clips.len(),
                online_iters,
                out.display()
            );
        }
        Command::Eval { pred, gt, out } => {
            let report = evaluate_dataset(&pred, &gt)?;
            print!("{}", report.to_table());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let csv_path = dir.join("metrics.csv");
                std::fs::write(&csv_path, report.to_csv())?;
                println!("wrote {}", csv_path.display());
            }
            if report.clips.is_empty() {
                bail!("no clips evaluated");
            }
        }
    }
    Ok(())
}
