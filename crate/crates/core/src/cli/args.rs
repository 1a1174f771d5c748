use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "overflow-probe",
    version,
    about = "Characterize and detect token overflow in soft context compression"
)]
pub struct Cli {
    /// JSON file of settings; command-line flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for feature extraction and cross-validation folds (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic overflow world or token-type corpus.
    Synth(SynthArgs),
    /// Judge outputs and write a labeled manifest.
    Label(LabelArgs),
    /// Compute a feature cache for one stage and feature set.
    Features(FeaturesArgs),
    /// Train a probe on a feature cache.
    Train(TrainArgs),
    /// Cross-validate a probe and write an evaluation report.
    Eval(EvalArgs),
    /// Tabulate evaluation reports into a stage by feature-set grid.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    Manifest,
    Substring,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Normalized,
    Raw,
}

/// Judge selection shared by every command that labels data.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct JudgeArgs {
    /// How missing correctness flags are filled; manifest flags always win.
    #[arg(long, value_enum, default_value = "manifest")]
    pub judge: JudgeKind,

    /// Endpoint for the external judge.
    #[arg(long, value_name = "URL")]
    pub judge_url: Option<String>,

    /// Per-request timeout for the external judge, in seconds.
    #[arg(long, default_value_t = 30.0, value_name = "SECONDS")]
    pub timeout_s: f64,

    /// Concurrent requests to the external judge.
    #[arg(long, default_value_t = 4, value_name = "N")]
    pub judge_concurrency: usize,

    /// Substring matching mode.
    #[arg(long = "match", value_enum, default_value = "normalized")]
    pub matching: MatchKind,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Generator preset: paper-mini (overflow world) or token-types (saturation corpus).
    #[arg(long, default_value = "paper-mini")]
    pub preset: String,

    /// Random seed (falls back to the config file, then OVERFLOW_PROBE_SEED, then 7).
    #[arg(long)]
    pub seed: Option<u64>,

    /// Override the number of instances (per class for token-types).
    #[arg(long, value_name = "N")]
    pub n_instances: Option<usize>,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LabelArgs {
    /// Input manifest (JSONL).
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,

    #[command(flatten)]
    #[serde(flatten)]
    pub judge: JudgeArgs,

    /// Labeled manifest to write; must sit in the input manifest's directory
    /// unless the referenced files use absolute paths.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FeaturesArgs {
    /// Input manifest (JSONL).
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,

    /// Pipeline stage to read features at.
    #[arg(long)]
    pub stage: String,

    /// Feature set to compose.
    #[arg(long)]
    pub features: String,

    /// Count whitespace-separated words when a record lacks token_count.
    #[arg(long)]
    pub whitespace_token_fallback: bool,

    #[command(flatten)]
    #[serde(flatten)]
    pub judge: JudgeArgs,

    /// Output stem; writes STEM.ovt and STEM.json.
    #[arg(long, value_name = "STEM")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Feature cache stem written by `features`.
    #[arg(long, value_name = "STEM")]
    pub cache: PathBuf,

    /// Probe architecture: logistic, linear, mlp or mlp_scl.
    #[arg(long)]
    pub probe: Option<String>,

    /// Random seed (falls back to the config file, then OVERFLOW_PROBE_SEED, then 7).
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output model directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Input manifest; features are computed on the fly.
    #[arg(long, value_name = "FILE", conflicts_with = "cache")]
    pub manifest: Option<PathBuf>,

    /// Feature cache stem written by `features`.
    #[arg(long, value_name = "STEM")]
    pub cache: Option<PathBuf>,

    /// Pipeline stage (taken from the cache when omitted).
    #[arg(long)]
    pub stage: Option<String>,

    /// Feature set (taken from the cache when omitted).
    #[arg(long)]
    pub features: Option<String>,

    /// Probe architecture (default: logistic for engineered features, linear for representations).
    #[arg(long)]
    pub probe: Option<String>,

    /// Number of cross-validation folds.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,

    /// Random seed (falls back to the config file, then OVERFLOW_PROBE_SEED, then 7).
    #[arg(long)]
    pub seed: Option<u64>,

    /// Count whitespace-separated words when a record lacks token_count.
    #[arg(long)]
    pub whitespace_token_fallback: bool,

    #[command(flatten)]
    #[serde(flatten)]
    pub judge: JudgeArgs,

    /// Output directory for report.json, report.txt and folds.csv.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Report files or directories containing report.json.
    #[arg(required = true, value_name = "REPORT")]
    pub inputs: Vec<PathBuf>,

    /// Output directory for grid.json and grid.txt.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}
