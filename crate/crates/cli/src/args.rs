use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use collabres::train::EarlyStopMetric;

/// Multi-label diagnosis-code prediction from prescriptions with
/// collaborative residual networks.
#[derive(Debug, Parser)]
#[command(name = "collabres", version, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for splitting, initialization, shuffling and dropout.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for training. Results are reproducible for a fixed
    /// thread count.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=256))]
    pub threads: u64,

    /// Output directory (or file, for predict and report).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// key=value file of flag defaults; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log progress (-v) or debug detail (-vv) to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest raw episode records, clean them, binarize and split.
    Prepare(PrepareArgs),
    /// Train a model on a prepared dataset.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a prepared dataset.
    Evaluate(EvaluateArgs),
    /// Predict diagnosis codes for raw episode records.
    Predict(PredictArgs),
    /// Generate a synthetic dataset with a known generating process.
    Synth(SynthArgs),
    /// Label-frequency table of a prepared dataset.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Episode record CSV (record_type,episode_id,field1,field2,field3).
    pub input: PathBuf,

    /// Labels present in fewer episodes are removed.
    #[arg(long, default_value_t = 3)]
    pub min_instances: usize,

    /// Medication tokens present in fewer episodes are removed.
    #[arg(long, default_value_t = 1)]
    pub min_token_count: usize,

    /// Diagnosis codes are truncated to this many characters.
    #[arg(long, default_value_t = 3)]
    pub code_length: usize,

    /// Prescription statuses treated as cancelled (case-insensitive).
    #[arg(long, value_delimiter = ',', default_value = "cancelled")]
    pub cancelled_status: Vec<String>,

    /// Train, dev and test fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.1,0.2")]
    pub ratios: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared dataset directory.
    pub data: PathBuf,

    /// M1..M8 or collabres.
    #[arg(long, default_value = "collabres")]
    pub model: String,

    /// Number of collabres branches.
    #[arg(long, default_value_t = 4)]
    pub branches: usize,

    /// Per-branch dropout rates; defaults to 0.1, 0.2, ... per branch.
    #[arg(long, value_delimiter = ',')]
    pub dropouts: Vec<f32>,

    /// Hidden width of each collabres branch.
    #[arg(long, default_value_t = 600)]
    pub branch_hidden: usize,

    /// Output width of each collabres branch.
    #[arg(long, default_value_t = 400)]
    pub branch_out: usize,

    /// Width of the collabres fusion block.
    #[arg(long, default_value_t = 600)]
    pub fusion_width: usize,

    /// Divide every baseline hidden width by this factor.
    #[arg(long, default_value_t = 1)]
    pub width_divisor: usize,

    #[arg(long, default_value_t = 2048)]
    pub batch_size: usize,

    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,

    /// Validation epochs without improvement before stopping.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,

    /// Validation metric for early stopping.
    #[arg(long, default_value_t = EarlyStopMetric::PrimaryAccuracy)]
    pub metric: EarlyStopMetric,

    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,

    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,

    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,

    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,

    /// Score threshold for predicted label sets, stored in the checkpoint.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,

    /// Visit training rows in file order every epoch.
    #[arg(long)]
    pub no_shuffle: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint written by train.
    pub checkpoint: PathBuf,

    /// Prepared dataset directory.
    pub data: PathBuf,

    #[arg(long, default_value = "test")]
    pub split: String,

    /// Demographic columns for grouped accuracy tables: gender, age.
    #[arg(long, value_delimiter = ',')]
    pub group_by: Vec<String>,

    /// Write every report that can be produced even when one fails.
    #[arg(long)]
    pub keep_going: bool,

    /// Overrides the checkpoint's threshold.
    #[arg(long)]
    pub threshold: Option<f64>,

    /// Rows of the chapter table.
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,

    /// Model name in the results table; defaults to the checkpoint's.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint written by train.
    pub checkpoint: PathBuf,

    /// Episode record CSV; diagnosis rows are ignored.
    pub input: PathBuf,

    /// Overrides the checkpoint's threshold.
    #[arg(long)]
    pub threshold: Option<f64>,

    /// Ranked codes listed per episode.
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,

    /// Medication vocabulary size.
    #[arg(long, default_value_t = 300)]
    pub tokens: usize,

    #[arg(long, default_value_t = 50)]
    pub labels: usize,

    /// Expected medication tokens per sample.
    #[arg(long, default_value_t = 12.0)]
    pub meds_per_sample: f64,

    /// Tokens that can trigger each label.
    #[arg(long, default_value_t = 16)]
    pub support_size: usize,

    /// Probability of flipping each label cell.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,

    /// Train, dev and test fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.1,0.2")]
    pub ratios: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Prepared dataset directory.
    pub data: PathBuf,

    /// train, dev, test or all.
    #[arg(long, default_value = "all")]
    pub split: String,

    /// Most frequent labels to list.
    #[arg(long, default_value_t = 30)]
    pub top_k: usize,

    /// Long-tail bounds are multiples of this count.
    #[arg(long, default_value_t = 3)]
    pub min_instances: usize,

    /// Print the long-tail summary instead of the frequency table.
    #[arg(long)]
    pub long_tail: bool,
}
