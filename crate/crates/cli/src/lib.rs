//! Command-line driver: config layering, run directories and the subcommands.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Override, Preset, RunConfig};
pub use error::{exit, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "vivat", version, about = "KL-VAE artifact lab")]
pub struct Cli {
    /// TOML config file merged over the defaults (and preset).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dotted-path override, e.g. `train.max_steps=10`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<Override>,
    /// Replaces `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; a fresh one under the run root when omitted.
    #[arg(long, global = true, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Parent of generated run directories.
    #[arg(long, global = true, env = "VIVAT_RUN_ROOT", default_value = "runs", value_name = "DIR")]
    pub run_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trains a model (full phase, then any configured decoder-only steps).
    Train {
        /// Continue from a training-state checkpoint.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
    },
    /// Continues a training state with the encoder frozen.
    FinetuneDecoder {
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        /// Decoder-only steps; defaults to `train.decoder_finetune_steps`.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Writes side-by-side reconstructions and artifact reports for a folder of PNGs.
    Reconstruct {
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        input: PathBuf,
        #[arg(long, value_name = "DIR")]
        output: PathBuf,
        /// Also write per-layer activation-norm heatmaps.
        #[arg(long)]
        trace: bool,
    },
    /// Scores (input, reconstruction) pairs from `DIR/input` and `DIR/recon`.
    Diagnose {
        #[arg(long, value_name = "DIR")]
        pairs: PathBuf,
        /// Also export residual spectra.
        #[arg(long)]
        spectra: bool,
    },
    /// PSNR/SSIM of a checkpoint over the evaluation images.
    Metrics {
        #[arg(long, value_name = "CKPT", required_unless_present = "identity")]
        checkpoint: Option<PathBuf>,
        /// Score the identity map instead of a model.
        #[arg(long, conflicts_with = "checkpoint")]
        identity: bool,
    },
    /// Trains two configurations on the same data and compares them.
    Ab {
        #[arg(long, value_name = "FILE")]
        config_a: PathBuf,
        #[arg(long, value_name = "FILE")]
        config_b: PathBuf,
    },
    /// Constant-input padding probe and activation-norm statistics.
    Probe {
        /// Model to probe; a freshly initialized one from the config when omitted.
        #[arg(long, value_name = "CKPT")]
        checkpoint: Option<PathBuf>,
        /// Pixel value of the constant probe image.
        #[arg(long, default_value_t = 0.5)]
        value: f64,
        /// Probe image side; defaults to the training image size.
        #[arg(long)]
        size: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::FinetuneDecoder { .. } => "finetune-decoder",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Diagnose { .. } => "diagnose",
            Command::Metrics { .. } => "metrics",
            Command::Ab { .. } => "ab",
            Command::Probe { .. } => "probe",
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    commands::dispatch(cli)
}
