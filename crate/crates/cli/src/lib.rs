//! Command-line driver: data preparation, training, ablations, case-level
//! evaluation and reports.

pub mod commands;
pub mod fetch;
pub mod manifest;
pub mod svg;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("checksum mismatch for {}: expected md5 {expected}, got {actual}", path.display())]
    ChecksumMismatch { path: PathBuf, expected: String, actual: String },
    #[error("network unavailable fetching {url}: {reason}; rerun with --offline to generate the synthetic stand-in")]
    NetworkUnavailable { url: String, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(String),
    #[error("training: {0}")]
    Train(#[from] compseg_core::trainer::TrainError),
    #[error("evaluation: {0}")]
    Eval(#[from] compseg_core::evaluation::EvalError),
    #[error("model: {0}")]
    Model(#[from] compseg_core::nn::ModelError),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

/// Environment variable naming the data root. Holds `mnist/` and
/// `synthslide/` as written by `fetch-data` and `build-corpus`.
pub const DATA_DIR_ENV: &str = "COMPSEG_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "compseg", version, about = "Segmentation with complementary labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download and verify the MNIST files, or write a synthetic stand-in.
    FetchData(FetchArgs),
    /// Generate a synthetic slide corpus.
    BuildCorpus(CorpusArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Train every condition for every seed and summarize.
    Ablation(AblationArgs),
    /// Segment slides with a checkpoint and score case-level predictions.
    EvalCases(EvalArgs),
    /// Rebuild summaries and figures from a finished output directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// Target directory. Defaults to $COMPSEG_DATA_DIR/mnist or data/mnist.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub offline: bool,
    /// Seed of the synthetic stand-in.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = fetch::MIRROR)]
    pub url: String,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// TOML file with corpus settings; defaults apply otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to $COMPSEG_DATA_DIR/synthslide or data/synthslide.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// baseline, complementary or fully-supervised.
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// A count N (seeds start..start+N) or a comma-separated list.
    #[arg(long)]
    pub seeds: Option<String>,
    /// First seed when --seeds is a count.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict to the named arms; repeatable.
    #[arg(long)]
    pub condition: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = "runs/ablation")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus manifest. Defaults to $COMPSEG_DATA_DIR/synthslide/manifest.csv.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "runs/eval-cases")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub patch_size: usize,
    /// Grid step in patch lengths; 1 tiles the slide completely.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cases to score: test, validation, annotated, complementary or all.
    #[arg(long, default_value = "test")]
    pub role: String,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of an `ablation` or `eval-cases` run.
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to `report/` inside the input directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Data root from the environment, if set.
pub fn data_root() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Runs a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> Result<i32, CliError> {
    let root = data_root();
    match cli.command {
        Command::FetchData(a) => commands::fetch_data(&a, root.as_deref()),
        Command::BuildCorpus(a) => commands::build_corpus(&a, root.as_deref()),
        Command::Train(a) => commands::train(&a, root.as_deref()),
        Command::Ablation(a) => commands::ablation(&a, root.as_deref()),
        Command::EvalCases(a) => commands::eval_cases(&a, root.as_deref()),
        Command::Report(a) => commands::report(&a),
    }
}
