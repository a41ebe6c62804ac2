//! `pcmp`: data generation, training, calibration, evaluation and the
//! wheelbase sweep.

mod commands;
mod errors;
mod manifest;
mod plots;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "pcmp", version, about = "Physics-constrained motion prediction toolkit")]
pub struct Cli {
    /// JSON config with optional `gen`, `model` and `train` sections.
    #[arg(long, global = true, env = "PCMP_CONFIG")]
    pub config: Option<PathBuf>,
    /// Worker thread cap (defaults to the available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate the track cells and write train/val/test windows.
    GenData(GenArgs),
    /// Train a PCMP or LSTM head.
    Train(TrainArgs),
    /// Calibrate a conformal region on the validation split.
    Calibrate(CalibrateArgs),
    /// Metrics, coverage tables and plots on a split.
    Eval(EvalArgs),
    /// Train one PCMP model per wheelbase and correlate with accuracy.
    SweepWheelbase(SweepArgs),
    /// Predict from a CSV of observation windows.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TrackChoice {
    Circuit,
    Circle,
    Stadium,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated seconds per (line, controller, speed) cell.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Standard deviation of the observation noise on x, y and v.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_enum)]
    pub track: Option<TrackChoice>,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum HeadChoice {
    Pcmp,
    Lstm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerChoice {
    Sgd,
    Momentum,
    Adam,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "pcmp")]
    pub head: HeadChoice,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerChoice>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grow the loss horizon during training.
    #[arg(long)]
    pub curriculum: bool,
    #[arg(long, default_value_t = 1)]
    pub h0: usize,
    #[arg(long, default_value_t = 2)]
    pub epochs_per_increment: usize,
    #[arg(long)]
    pub wheelbase: Option<f64>,
    #[arg(long)]
    pub val_every: Option<usize>,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum RegionChoice {
    RotRect,
    Frenet,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeChoice {
    Single,
    Multi,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long, required_unless_present = "ctrv")]
    pub checkpoint: Option<PathBuf>,
    /// Calibrate the CTRV baseline instead of a checkpoint.
    #[arg(long)]
    pub ctrv: bool,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "rot-rect")]
    pub region: RegionChoice,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, value_enum, default_value = "single")]
    pub mode: ModeChoice,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoints to evaluate; CTRV is always included.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitChoice,
    #[arg(long)]
    pub out: PathBuf,
    /// Also calibrate both region types and report test coverage.
    #[arg(long)]
    pub coverage: bool,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Write SVG figures.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated wheelbases; defaults to 0.0802..1.5002 in 0.01 steps.
    #[arg(long, value_delimiter = ',')]
    pub wheelbases: Vec<f64>,
    /// Keep every k-th value of the default grid.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub test_limit: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, required_unless_present = "ctrv")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub ctrv: bool,
    /// Prediction length for CTRV.
    #[arg(long, default_value_t = 60)]
    pub horizon: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(errors::exit_code(&e))
        }
    }
}
