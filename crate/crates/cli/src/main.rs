mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use memnorm::corpus::Language;

/// Two-stage text normalization: a boosted-tree gate decides which tokens
/// change, a DNC sequence-to-sequence model rewrites them.
#[derive(Debug, Parser)]
#[command(name = "memnorm", version, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct Global {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Upper bound on worker threads; all stages currently run on one.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Where to write the run manifest; defaults to a file beside the primary output.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LangArg {
    En,
    Ru,
}

impl From<LangArg> for Language {
    fn from(l: LangArg) -> Self {
        match l {
            LangArg::En => Language::En,
            LangArg::Ru => Language::Ru,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSize {
    /// N=32, W=16, R=2, hidden 128, embedding 16.
    Small,
    /// N=256, W=64, R=5, hidden 1024, embedding 32.
    Paper,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct DataArgs {
    /// Corpus directory holding the `output-XXXXX-of-00100` shards.
    #[arg(long, env = "MEMNORM_DATA")]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "en")]
    pub lang: LangArg,
    /// Read at most this many lines from each shard.
    #[arg(long)]
    pub max_lines: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the gradient-boosted gate on the training shards.
    TrainClassifier(TrainClassifierArgs),
    /// Train the sequence-to-sequence DNC on tokens that need rewriting.
    TrainTranslator(TrainTranslatorArgs),
    /// Normalize whitespace-tokenized sentences, one per line.
    Normalize(NormalizeArgs),
    /// Score the models on the test slice and write per-class reports.
    Evaluate(EvaluateArgs),
    /// Duplicate sentences until rare token kinds reach their targets.
    Upsample(UpsampleArgs),
    /// Train on the synthetic copy task and report held-out accuracy.
    CopyTask(CopyTaskArgs),
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct TrainClassifierArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Ensemble output file; metrics go to `<stem>.metrics.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 361)]
    pub estimators: usize,
    #[arg(long, default_value_t = 0.3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 6)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 1.0)]
    pub min_child_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Trailing fraction of sentences held out for validation.
    #[arg(long, default_value_t = 0.1)]
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct TrainTranslatorArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Weights file (`.mnrm`); config, vocabularies, loss log and
    /// checkpoint are written beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, value_enum, default_value = "small")]
    pub config: ModelSize,
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    /// Global gradient-norm clip.
    #[arg(long, default_value_t = 10.0)]
    pub clip_norm: f64,
    /// Log and checkpoint interval in steps.
    #[arg(long, default_value_t = 1000)]
    pub eval_every: usize,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct NormalizeArgs {
    /// Directory with `classifier.gbdt` and `translator.mnrm`.
    #[arg(long)]
    pub models: PathBuf,
    /// Input file; standard input when absent.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Zero the memory read vectors fed back to the controller.
    #[arg(long)]
    pub ablate_memory: bool,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Report directory.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
    /// Also evaluate with zeroed read vectors and report both side by side.
    #[arg(long)]
    pub ablate_memory: bool,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct UpsampleArgs {
    /// JSON array of rules.
    #[arg(long)]
    pub rules: PathBuf,
    /// Directory of TSV shards.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct CopyTaskArgs {
    #[arg(long, default_value_t = 8)]
    pub len_max: usize,
    #[arg(long, default_value_t = 8)]
    pub symbols: usize,
    #[arg(long, default_value_t = 20_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Validation interval in steps.
    #[arg(long, default_value_t = 250)]
    pub eval_every: usize,
    /// Held-out length-`len-max` sequences used for model selection.
    #[arg(long, default_value_t = 200)]
    pub validation_size: usize,
    /// Held-out length-`len-max` sequences scored at the end.
    #[arg(long, default_value_t = 1000)]
    pub test_size: usize,
    /// Re-score the trained model with zeroed read vectors.
    #[arg(long)]
    pub ablate_memory: bool,
    /// Report file (JSON); standard output only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
