use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "hopkins-loss",
    version,
    about = "Hopkins statistic, Hopkins-loss training experiments and reports"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic feature file and print its Hopkins statistic.
    Gen(GenArgs),
    /// Compute the Hopkins statistic of a feature file.
    Hopkins(HopkinsArgs),
    /// Train MLP classifiers over a grid of Hopkins targets.
    TrainClassify(TrainClassifyArgs),
    /// Train autoencoders plus linear probes over targets and bottlenecks.
    TrainAe(TrainAeArgs),
    /// Aggregate run records into summary and quantile tables.
    Report(ReportArgs),
    /// Time training epochs with and without the Hopkins term.
    BenchEpoch(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Grid,
    Uniform,
    Clusters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Chebyshev,
    Euclidean,
    Manhattan,
    Cosine,
    Mahalanobis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Classify,
    Autoencode,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid jitter as a fraction of the spacing.
    #[arg(long, default_value_t = 0.05)]
    pub jitter: f64,
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    /// Per-coordinate standard deviation of each blob.
    #[arg(long, default_value_t = 0.05)]
    pub spread: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HopkinsArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Chebyshev)]
    pub metric: MetricArg,
    /// Sampling fraction.
    #[arg(long, default_value_t = 0.05)]
    pub k: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
}

/// Where the data comes from and how it is split.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Feature CSV with an integer `label` column.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, requires_all = ["idx_train_labels", "idx_test_images", "idx_test_labels"])]
    pub idx_train_images: Option<PathBuf>,
    #[arg(long)]
    pub idx_train_labels: Option<PathBuf>,
    #[arg(long)]
    pub idx_test_images: Option<PathBuf>,
    #[arg(long)]
    pub idx_test_labels: Option<PathBuf>,
    /// Rows of the IDX training file held out for validation.
    #[arg(long, default_value_t = 10_000)]
    pub idx_validation: usize,
    /// Generate labelled blobs instead of reading a file.
    #[arg(long)]
    pub synth: bool,
    #[arg(long, default_value_t = 3000)]
    pub synth_n: usize,
    #[arg(long, default_value_t = 16)]
    pub synth_d: usize,
    #[arg(long, default_value_t = 3)]
    pub synth_clusters: usize,
    #[arg(long, default_value_t = 0.2)]
    pub synth_spread: f64,
    /// Seed for data generation and splitting (defaults to --seed).
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Z-score features with training-split statistics.
    #[arg(long)]
    pub zscore: bool,
    #[arg(long, default_value_t = 0.6)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    pub validation_fraction: f64,
    /// Keep rows sharing a `group` id in the same split.
    #[arg(long)]
    pub group_split: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainOpts {
    /// Hopkins targets H_T, each trained alongside the baseline.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.5,0.99")]
    pub targets: Vec<f64>,
    /// Train only the baseline (no Hopkins term).
    #[arg(long)]
    pub baseline_only: bool,
    /// Weight of the primary loss in Hopkins conditions.
    #[arg(long, default_value_t = 0.75)]
    pub weight: f64,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Base seed; repeat r uses seed + r.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub max_epochs: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Chebyshev)]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 0.05)]
    pub k: f64,
    /// Select models on the primary loss only.
    #[arg(long)]
    pub validation_without_hopkins: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainClassifyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct TrainAeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long, value_delimiter = ',', default_value = "32,8,2")]
    pub bottlenecks: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub probe_max_epochs: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory containing runs.jsonl.
    pub runs: PathBuf,
    /// Output directory for the tables (defaults to the run directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = Task::Classify)]
    pub task: Task,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.75)]
    pub weight: f64,
    #[arg(long, default_value_t = 0.5)]
    pub target: f64,
    #[arg(long, default_value_t = 2)]
    pub bottleneck: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the timing table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
