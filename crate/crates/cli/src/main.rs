//! `ventri`: the screening pipeline as subcommands.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ventri::error::ErrorKind;

#[derive(Debug, Parser)]
#[command(name = "ventri", version, about = "Ultrasound ventriculomegaly screening pipeline")]
struct Cli {
    /// Run configuration (TOML, one section per stage).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory holding run directories.
    #[arg(long, global = true, env = config::RUN_ROOT_ENV)]
    run_root: Option<PathBuf>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Seed {
    /// Seed for every random stream of this stage.
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Cleaned images: a directory or a manifest CSV [default: <run>/data/clean].
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Split assignment file [default: <run>/split/assignments.csv].
    #[arg(long)]
    assignments: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the phantom dataset.
    Synth {
        #[command(flatten)]
        seed: Seed,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Crop headers and inpaint colored annotations.
    Scrub {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the refined annotation masks as 1-bit PNGs.
        #[arg(long)]
        masks: bool,
        #[arg(long)]
        force: bool,
    },
    /// Stratified hold-out test set and k folds.
    Split {
        #[command(flatten)]
        seed: Seed,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Masked-autoencoder pretraining on the train+val pool.
    Pretrain {
        #[command(flatten)]
        seed: Seed,
        #[command(flatten)]
        data: DataArgs,
        /// Convert a published safetensors encoder instead of training.
        #[arg(long)]
        published: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Cross-validated fine-tuning, then test-set predictions per fold.
    Finetune {
        #[command(flatten)]
        seed: Seed,
        #[command(flatten)]
        data: DataArgs,
        /// Pretrained encoder [default: <run>/pretrain/encoder.json].
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Hyperparameter grid over batch size, learning rate and weight decay.
    Grid {
        #[command(flatten)]
        seed: Seed,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run up to this many combinations as parallel subprocesses.
        #[arg(long, default_value_t = 1)]
        max_parallel: usize,
        #[arg(long)]
        force: bool,
    },
    /// Metrics, curves and pooled confusion over per-fold test predictions.
    Evaluate {
        /// Directory of `fold<i>.csv` files [default: <run>/finetune/test_predictions].
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Eigen-CAM heatmap and overlay for one image.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Block index; defaults to the config value, else the last block.
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Scrub the image (crop and inpaint) before resizing.
        #[arg(long)]
        scrub: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metric tables and plots from stored run artifacts.
    Report {
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Directory with `cv_summary.json` [default: <run>/finetune].
        #[arg(long)]
        finetune: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose, cli.quiet);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
