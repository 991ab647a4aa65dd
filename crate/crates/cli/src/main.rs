//! Operator-facing command surface binding the toolkit into reproducible
//! runs.
//!
//! Exit codes are a stable scripting contract: 0 success, 1 runtime
//! failure, 2 usage error.

mod commands;
mod expspec;
mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "a2log",
    version,
    about = "Unsupervised log anomaly detection: transformer scoring with an augmentation-calibrated decision boundary"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus
    Synth(SynthArgs),
    /// Train a scoring model on the chronological head of a corpus
    Train(TrainArgs),
    /// Compute a decision boundary for a trained checkpoint
    Calibrate(CalibrateArgs),
    /// Score a labeled test set against a boundary and report metrics
    Evaluate(EvaluateArgs),
    /// Run a full multi-split, multi-method experiment from a spec file
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    /// `<label> <content...>`, label `-` marks normal lines
    LabeledHpc,
    /// bare content per line, all records normal
    PlainNormal,
}

impl From<FormatArg> for a2log_core::corpus::CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::LabeledHpc => a2log_core::corpus::CorpusFormat::LabeledHpc,
            FormatArg::PlainNormal => a2log_core::corpus::CorpusFormat::PlainNormal,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Number of normal templates
    #[arg(long)]
    templates: usize,
    /// Number of anomaly templates, disjoint from the normal ones
    #[arg(long)]
    anomaly_templates: usize,
    /// Total lines to generate
    #[arg(long)]
    lines: usize,
    /// Per-line anomaly probability in [0,1)
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output corpus path (labeled-HPC format)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Target corpus to train on
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "labeled-hpc")]
    format: FormatArg,
    /// Read at most this many lines from the head of each corpus
    #[arg(long)]
    max_lines: Option<usize>,
    /// External corpora for the stabilization class (repeatable)
    #[arg(long = "stab", required = true)]
    stab: Vec<PathBuf>,
    /// Train on the first SPLIT fraction of normal records
    #[arg(long)]
    split: f64,
    /// Training config file (flat key = value)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stabilization samples per external corpus
    #[arg(long, default_value_t = 60_000)]
    per_source: usize,
    /// Master seed; overrides the config file seeds
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoint, vocabulary, and report
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Target corpus; its training split feeds the boundary
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "labeled-hpc")]
    format: FormatArg,
    #[arg(long)]
    max_lines: Option<usize>,
    /// Split fraction used when the checkpoint was trained
    #[arg(long)]
    split: Option<f64>,
    /// Boundary method: a2log, three-sigma, or best
    #[arg(long)]
    method: String,
    /// Tokens to mask per augmented sequence
    #[arg(long, default_value_t = 1)]
    alpha: usize,
    /// Augmented variants per training sequence
    #[arg(long, default_value_t = 1)]
    rounds: usize,
    /// Percentile of the augmented score distribution, in (0,1]
    #[arg(long, default_value_t = 0.95)]
    p: f64,
    /// Regulator multiplied onto the percentile value
    #[arg(long, default_value_t = 2.5)]
    beta: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Labeled test data; required for method=best
    #[arg(long)]
    test: Option<PathBuf>,
    /// Output boundary record path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Boundary record produced by `calibrate`
    #[arg(long)]
    boundary: PathBuf,
    /// Labeled test corpus
    #[arg(long)]
    test: Option<PathBuf>,
    /// Full corpus to evaluate the held-out complement of a training split
    #[arg(long)]
    data: Option<PathBuf>,
    /// Split fraction whose complement is evaluated (with --data)
    #[arg(long)]
    split: Option<f64>,
    #[arg(long, value_enum, default_value = "labeled-hpc")]
    format: FormatArg,
    #[arg(long)]
    max_lines: Option<usize>,
    /// Output metrics document path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment spec file (flat key = value)
    #[arg(long)]
    spec: PathBuf,
    /// Master seed; overrides the spec file's master_seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for results documents
    #[arg(long)]
    out: PathBuf,
}

/// Failures split into usage errors (exit 2) and runtime errors (exit 1).
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Train(args) => commands::train(args),
        Command::Calibrate(args) => commands::calibrate(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Experiment(args) => commands::experiment(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
