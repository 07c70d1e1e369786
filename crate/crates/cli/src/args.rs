use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "smm", version, about = "Detect stereotypical motor movements in multi-channel IMU recordings")]
pub struct Cli {
    /// Worker threads for folds and ensemble members (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// File of `flag=value` lines supplying defaults; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic recordings as CSV files.
    Synth(SynthArgs),
    /// Filter, resample, segment and label recordings into a window archive.
    Preprocess(PreprocessArgs),
    /// Leave-one-subject-out training and evaluation.
    Train(TrainArgs),
    /// Score a saved model on a dataset.
    Eval(EvalArgs),
    /// Leave-one-subject-out training initialized from a source model.
    Transfer(TransferArgs),
    /// Best-b ensembles of independently seeded models, per held-out subject.
    Ensemble(EnsembleArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub subjects: usize,
    /// Recording length per subject.
    #[arg(long, default_value_t = 30.0)]
    pub minutes: f64,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 100.0)]
    pub rate: f64,
    /// Target fraction of SMM samples, in (0, 1).
    #[arg(long, default_value_t = 0.27)]
    pub smm: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 9)]
    pub channels: usize,
    /// Lower edge of the SMM frequency band in Hz.
    #[arg(long, default_value_t = 2.0)]
    pub band_lo: f64,
    /// Upper edge of the SMM frequency band in Hz.
    #[arg(long, default_value_t = 4.0)]
    pub band_hi: f64,
    /// Seed of the movement template shared by all subjects (default: --seed).
    #[arg(long)]
    pub template_seed: Option<u64>,
    /// Subject ids are `<prefix>1..<prefix>N`.
    #[arg(long, default_value = "sub")]
    pub prefix: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Directory of recording CSV files.
    #[arg(long)]
    pub input: PathBuf,
    /// High-pass cut-off in Hz; 0 disables filtering.
    #[arg(long, default_value_t = 0.1)]
    pub highpass: f64,
    /// Target sampling rate in Hz.
    #[arg(long)]
    pub resample: Option<f64>,
    /// Window length in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub window: f64,
    /// Window step in samples.
    #[arg(long, default_value_t = 10)]
    pub step: usize,
    /// Minimum SMM share of a window's samples for an SMM label.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// simulated | real1 | real2 | synthetic
    #[arg(long, default_value = "synthetic")]
    pub provenance: String,
    #[arg(long, default_value_t = 9)]
    pub channels: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Where windows come from: a preprocess archive, or a directory of CSV files
/// segmented on the fly.
#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Window length in seconds (CSV directories only).
    #[arg(long)]
    pub window: Option<f64>,
    /// Window step in samples (CSV directories only).
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(long, default_value_t = 9)]
    pub channels: usize,
    /// Comma-separated held-out subjects to run (default: all).
    #[arg(long, value_delimiter = ',')]
    pub subjects: Vec<String>,
}

#[derive(Debug, Args, Clone)]
pub struct CnnArgs {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// max | avg
    #[arg(long, default_value = "max")]
    pub pool: String,
    /// he | normal:<std>
    #[arg(long, default_value = "he")]
    pub init: String,
}

#[derive(Debug, Args, Clone)]
pub struct LstmArgs {
    /// Windows per sequence.
    #[arg(long)]
    pub tau: Option<usize>,
    /// LSTM hidden units.
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub lstm_epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub lstm_batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lstm_lr: f64,
    /// Train the convolutional layers jointly with the LSTM.
    #[arg(long)]
    pub fine_tune: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// cnn | cnn-lstm | svm-raw | svm-handcrafted
    #[arg(long, default_value = "cnn")]
    pub arch: String,
    /// Undersample the majority class of each training split.
    #[arg(long)]
    pub balanced: bool,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub cnn: CnnArgs,
    #[command(flatten)]
    pub lstm: LstmArgs,
    #[arg(long, default_value_t = 1e-3)]
    pub svm_lambda: f64,
    #[arg(long, default_value_t = 20)]
    pub svm_epochs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file (or ensemble spec file).
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Also report Fisher separability of raw, handcrafted and learned features.
    #[arg(long)]
    pub fisher: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Source model or parameter file.
    #[arg(long)]
    pub source: PathBuf,
    /// all | conv
    #[arg(long, default_value = "all")]
    pub scope: String,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Pool size.
    #[arg(long, default_value_t = 10)]
    pub l: usize,
    /// cnn | cnn-lstm
    #[arg(long, default_value = "cnn-lstm")]
    pub arch: String,
    /// Balance the training set of each member's CNN stage.
    #[arg(long)]
    pub balanced_cnn: bool,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub cnn: CnnArgs,
    #[command(flatten)]
    pub lstm: LstmArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Output directory for the replay (default: the original one).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Compare every replayed output with the original bytes.
    #[arg(long)]
    pub check: bool,
}
