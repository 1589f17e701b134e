//! Command-line front end for the `eventsnn` pipeline.

mod commands;
pub mod config;

pub use config::RunConfig;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

/// Error tagged with the pipeline stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct CliError {
    pub stage: &'static str,
    #[source]
    pub source: eventsnn::Error,
}

impl CliError {
    /// 2 for bad input, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        if self.source.is_validation() {
            2
        } else {
            3
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) trait Stage<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T> Stage<T> for eventsnn::Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|source| CliError { stage, source })
    }
}

#[derive(Debug, Parser)]
#[command(name = "eventsnn", version, about = "Train, convert and run event-driven spiking classifiers")]
pub struct Cli {
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Threads for per-sample simulation (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic event dataset.
    Synth(SynthArgs),
    /// Train a ReLU network on a dataset's training split.
    Train(TrainArgs),
    /// Convert a trained model into a spiking network.
    Convert(ConvertArgs),
    /// Calibrate cutoff thresholds on a dataset split.
    Calibrate(CalibrateArgs),
    /// Run one event file through a spiking network.
    Infer(InferArgs),
    /// Accuracy against inference time, one curve per epsilon.
    Eval(EvalArgs),
    /// Rate similarity, bounds and confidence curves.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for event files and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub duration_us: Option<u64>,
    #[arg(long)]
    pub max_rate: Option<f64>,
    #[arg(long)]
    pub noise_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Norm exponent of the penalty (`-inf` or a number).
    #[arg(long, allow_hyphen_values = true)]
    pub q: Option<String>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// `max` or `percentile:<p>`.
    #[arg(long)]
    pub lambda: Option<String>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// `auto` uses the model's stored maxima (or recomputes them when
    /// `--data` is given); otherwise a JSON file of activation stats.
    #[arg(long, default_value = "auto")]
    pub stats: String,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<String>,
    /// `initial`, `off` or `per_tick`.
    #[arg(long)]
    pub charge: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct SimArgs {
    /// Reset hidden membranes at F frame boundaries.
    #[arg(long)]
    pub per_frame: Option<usize>,
    /// Tick width in microseconds instead of 1/S_r.
    #[arg(long)]
    pub tick_us: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub snn: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Split to calibrate on.
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Calibrate each checkpoint only on samples not cut earlier.
    #[arg(long)]
    pub sequential: bool,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub snn: PathBuf,
    #[arg(long)]
    pub events: PathBuf,
    /// Beta table from `calibrate`.
    #[arg(long)]
    pub cutoff: Option<PathBuf>,
    /// Per-tick output counts as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub snn: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated epsilons, each calibrated on the training split.
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,
    /// Evaluate this table instead of calibrating.
    #[arg(long)]
    pub cutoff: Option<PathBuf>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Calibrate each checkpoint only on samples not cut earlier.
    #[arg(long)]
    pub sequential: bool,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// The trained (unconverted) model.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub snn: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Fraction of the stream at which the beta curve is taken.
    #[arg(long, default_value_t = 0.25)]
    pub at_ratio: f64,
    #[command(flatten)]
    pub sim: SimArgs,
}

/// Merges the config file and global flags; flags win.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).stage("config")?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::Synth(a) => commands::synth(&mut cfg, a),
        Command::Train(a) => commands::train(&mut cfg, a),
        Command::Convert(a) => commands::convert(&mut cfg, a),
        Command::Calibrate(a) => commands::calibrate(&mut cfg, a),
        Command::Infer(a) => commands::infer(&mut cfg, a),
        Command::Eval(a) => commands::eval(&mut cfg, a),
        Command::Analyze(a) => commands::analyze(&mut cfg, a),
    }
}

/// Parses `args` and runs them, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
