use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "nytune", version, about = "Tune Nystrom kernel ridge regression hyperparameters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Optimize all hyperparameters of one objective with Adam.
    Optimize(OptimizeArgs),
    /// Evaluate objectives on a (lambda, lengthscale) grid with fixed centers.
    Grid(GridArgs),
    /// Compare exact and stochastic-trace optimization runs.
    SteStudy(SteStudyArgs),
    /// Repeat the run recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    Delimited,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskArg {
    Regression,
    Binary,
    Multiclass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticArg {
    Regression,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricArg {
    Rmse,
    Nrmse,
    Cerror,
    Auc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeArg {
    Gaussian,
    Rademacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteScopeArg {
    /// Effective dimension and trace gap.
    Both,
    /// Effective dimension only; the trace gap stays exact.
    EffectiveDimension,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// Dataset file. Without it a synthetic dataset is generated.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Delimited)]
    pub format: FormatArg,
    /// Field delimiter for delimited files.
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Skip the first line of delimited files.
    #[arg(long)]
    pub header: bool,
    /// Use the first column as the label instead of the last.
    #[arg(long)]
    pub label_first: bool,
    /// Feature count for sparse files (inferred when absent).
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long, value_enum, default_value_t = TaskArg::Regression)]
    pub task: TaskArg,
    /// Test fraction for file datasets.
    #[arg(long, default_value_t = 0.3)]
    pub test_frac: f64,
    /// Kind of synthetic dataset when no file is given.
    #[arg(long, value_enum, default_value_t = SyntheticArg::Regression)]
    pub synthetic: SyntheticArg,
    /// Synthetic sample size.
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Synthetic input dimension.
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Synthetic regression noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Target Bayes error of the synthetic binary task.
    #[arg(long, default_value_t = 0.35)]
    pub bayes_error: f64,
    /// Seed for synthetic data and file splits.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Fraction of the training rows held out for HOLD_OUT.
    #[arg(long, default_value_t = 0.6)]
    pub val_frac: f64,
    /// Test metric; defaults to RMSE for regression and c-error otherwise.
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Number of inducing points.
    #[arg(long, default_value_t = 100)]
    pub m: usize,
    /// Seed for initialization and probes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Noise variance estimate for CREG and PROP.
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// Multiplier of the norm part of PROP's regularized risk (1 or 2).
    #[arg(long, default_value_t = 2.0)]
    pub prop_reg_factor: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Consecutive increases before stopping; 0 disables early stopping.
    #[arg(long, default_value_t = 1)]
    pub patience: usize,
    #[arg(long, value_enum, default_value_t = ProbeArg::Gaussian)]
    pub probes: ProbeArg,
    /// PROP trace terms estimated from probes in STE mode.
    #[arg(long, value_enum, default_value_t = SteScopeArg::Both)]
    pub ste_scope: SteScopeArg,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, default_value = "nytune-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OptimizeArgs {
    #[arg(long, default_value = "prop")]
    pub objective: String,
    /// Estimate PROP's trace terms with fixed random probes.
    #[arg(long, conflicts_with = "exact")]
    pub ste: bool,
    /// Exact trace terms (the default).
    #[arg(long)]
    pub exact: bool,
    /// Number of probes in STE mode.
    #[arg(long, default_value_t = 20)]
    pub t: usize,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GridArgs {
    /// Comma separated objectives.
    #[arg(long, default_value = "prop,creg,gcv")]
    pub objectives: String,
    /// Log-spaced regularization grid as min:max:count.
    #[arg(long, default_value = "1e-6:1:13")]
    pub lambda_grid: String,
    /// Log-spaced lengthscale grid as min:max:count.
    #[arg(long, default_value = "0.1:10:11")]
    pub ell_grid: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SteStudyArgs {
    /// Comma separated probe counts.
    #[arg(long, default_value = "10,20,100")]
    pub t_list: String,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// Manifest written by a previous run.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; defaults to the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
