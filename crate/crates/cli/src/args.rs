use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "abstain",
    version,
    about = "Reject-option classifiers trained with the double sigmoid loss"
)]
pub struct Cli {
    /// Base seed; every random stream of the run derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for cell- and grid-level parallelism (1 = sequential).
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Directory receiving every output file (default: current directory,
    /// or the recorded one when replaying).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Sample the sine-boundary dataset with label flips near the boundary.
    GenData(GenDataArgs),
    /// Train a network and save it with its per-epoch history.
    Train(TrainArgs),
    /// Evaluate a saved model on a labelled CSV.
    Eval(EvalArgs),
    /// Cross-validated metrics over a grid of rejection costs.
    Sweep(SweepArgs),
    /// Accuracy on unrejected clean points after training on noisy labels.
    Noise(NoiseArgs),
    /// Generalization bound of a saved constant-band model.
    Bound(BoundArgs),
    /// Bound and held-out risk as the training sample grows.
    BoundCurve(BoundCurveArgs),
    /// Compare the closed-form minimizers with brute force.
    CalibrationCheck(CalibrationArgs),
    /// Re-run a command from its manifest.
    #[serde(skip)]
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Sweep(_) => "sweep",
            Command::Noise(_) => "noise",
            Command::Bound(_) => "bound",
            Command::BoundCurve(_) => "bound-curve",
            Command::CalibrationCheck(_) => "calibration-check",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenDataArgs {
    /// Number of points; must be even so both classes get n/2.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Half-width of the flip band, measured on x2 - x1 - 2 sin(x1).
    #[arg(long, default_value_t = 0.75)]
    pub flip_margin: f64,
    /// Probability of flipping a label inside the band.
    #[arg(long)]
    pub flip_prob: f64,
    #[arg(long, default_value = "synthetic.csv")]
    pub out: PathBuf,
}

/// How the label column of an input CSV is read.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct LabelArgs {
    /// Token of the positive class (numeric 0/1 or -1/+1 labels when omitted).
    #[arg(long, requires = "label_neg")]
    pub label_pos: Option<String>,
    /// Token of the negative class.
    #[arg(long, requires = "label_pos")]
    pub label_neg: Option<String>,
    /// Label in the first column instead of the last.
    #[arg(long)]
    pub label_first: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerChoice {
    Adagrad,
    Momentum,
}

/// Architecture and optimization settings shared by training commands.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Hidden widths of the shared body.
    #[arg(long, value_delimiter = ',', default_value = "64,64,64")]
    pub hidden: Vec<usize>,
    /// Sigmoid sharpness of the double sigmoid loss.
    #[arg(long)]
    pub gamma: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = OptimizerChoice::Adagrad)]
    pub optimizer: OptimizerChoice,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Momentum coefficient for `--optimizer momentum`.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// Halve the learning rate after this many epochs without progress.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Dropout rate on hidden layers during training.
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub label: LabelArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Rejection cost.
    #[arg(long)]
    pub d: f64,
    /// Weight of the double sigmoid loss against the auxiliary cross-entropy.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Hidden widths of an auxiliary two-logit head (required when alpha < 1).
    #[arg(long, value_delimiter = ',')]
    pub aux_hidden: Option<Vec<usize>>,
    /// Per-input rejection head with these hidden widths instead of a scalar band.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub instance_rho: Option<Vec<usize>>,
    /// Skip z-scoring the features.
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long, default_value = "model.json")]
    pub model_out: PathBuf,
    #[arg(long, default_value = "history.csv")]
    pub history_out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub label: LabelArgs,
    /// Rejection cost (defaults to the one the model was trained with).
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long, default_value = "metrics.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub label: LabelArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.05)]
    pub d_min: f64,
    #[arg(long, default_value_t = 0.5)]
    pub d_max: f64,
    #[arg(long, default_value_t = 0.05)]
    pub d_step: f64,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
}

/// Sine-boundary sampling shared by the synthetic experiments.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SyntheticArgs {
    #[arg(long, default_value_t = 1000)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0.75)]
    pub flip_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct NoiseArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Uniform label-noise rates applied to the training pool.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4")]
    pub rates: Vec<f64>,
    #[arg(long, default_value_t = 0.25)]
    pub d: f64,
    /// Allowed accuracy drop on unrejected clean test points.
    #[arg(long, default_value_t = 0.05)]
    pub tolerance: f64,
    #[arg(long, default_value = "noise.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct NormArgs {
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 2.0)]
    pub q: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Bound on the band (defaults to the realized one).
    #[arg(long)]
    pub rho_bar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BoundArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Training sample the bound is stated for.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out sample for the test risk.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub label: LabelArgs,
    #[command(flatten)]
    pub norm: NormArgs,
    #[arg(long, default_value = "bound.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BoundCurveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    #[command(flatten)]
    pub norm: NormArgs,
    #[arg(long, default_value_t = 0.5)]
    pub flip_prob: f64,
    #[arg(long, default_value_t = 0.25)]
    pub d: f64,
    #[arg(long, default_value_t = 100)]
    pub m_start: usize,
    #[arg(long, default_value_t = 1000)]
    pub m_end: usize,
    #[arg(long, default_value_t = 100)]
    pub m_step: usize,
    #[arg(long, default_value = "bound_curve.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CalibrationArgs {
    /// Sharpness to report on; the closed forms are verified at 1 only.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Random finite distributions for the excess-risk inequality.
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub z_step: f64,
    #[arg(long, default_value = "calibration.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}
