//! `lcr`: codec training, encode/decode, anchors, compressed-domain
//! classification, evaluation tables, and curves.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lcr_core::pipeline::Workflow;

#[derive(Parser, Debug)]
#[command(name = "lcr", version, about = "Learned image compression and compressed-domain classification")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the config file and `LCR_SEED`.
#[derive(Args, Debug, Clone, Default)]
pub struct Global {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; takes precedence over `LCR_SEED` and the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for checkpoints, logs, and reports.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Manifest TSV; replaces the configured dataset.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// MINC-2500 root; replaces the configured dataset.
    #[arg(long, global = true, conflicts_with = "manifest")]
    pub minc_root: Option<PathBuf>,
    /// Quality indices, comma-separated (e.g. `1,4,8`).
    #[arg(long, global = true, value_delimiter = ',')]
    pub quality: Option<Vec<u8>>,
    /// Codec checkpoint path; `{q}` expands to the quality index.
    #[arg(long, global = true)]
    pub codec_checkpoint: Option<String>,
    /// Pixel-domain classifier checkpoint (anchor 1 input, anchor 2 start).
    #[arg(long, global = true)]
    pub classifier_checkpoint: Option<PathBuf>,
    /// Epoch count for the training this command runs.
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Batch size for the training this command runs.
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// Initial learning rate for the training this command runs.
    #[arg(long, global = true)]
    pub learning_rate: Option<f32>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one codec per configured quality index.
    TrainCodec,
    /// Encode an image into a `.lsc` stream.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Codec checkpoint (default: the configured one for `--quality`).
        #[arg(long)]
        codec: Option<PathBuf>,
    },
    /// Decode a `.lsc` stream to PNG; prints a quality report when the
    /// original is given.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        codec: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Encode the whole dataset into the latent store.
    PrecomputeLatents,
    /// Train (and test) a classifier for one workflow.
    TrainClassifier {
        #[arg(long, value_parser = parse_workflow)]
        workflow: Workflow,
    },
    /// Re-evaluate saved classifiers and write `evaluation.csv`.
    Evaluate {
        /// Workflows to evaluate (default: every one with checkpoints).
        #[arg(long, value_parser = parse_workflow, value_delimiter = ',')]
        workflow: Option<Vec<Workflow>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy-vs-rate/PSNR/SSIM series from evaluation CSVs.
    Curves {
        /// Evaluation CSVs (default: `<output_dir>/evaluation.csv`).
        #[arg(long)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Channel-summed grayscale maps of `ŷ` and `σ̂` for a `.lsc` stream or image.
    LatentSummary {
        #[arg(long)]
        input: PathBuf,
        /// Output prefix; writes `<prefix>_y.png` and `<prefix>_sigma.png`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        codec: Option<PathBuf>,
    },
    /// Write the synthetic texture dataset and its manifest.
    SynthToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
}

fn parse_workflow(s: &str) -> Result<Workflow, String> {
    Workflow::parse(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
