//! `arqcd`: simulate AR-in-noise data, run detectors, and drive Monte-Carlo
//! campaigns. Exit status 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use arqcd::simulate::ChangePoint;

/// Environment variable that overrides `--workers`.
pub const WORKERS_ENV: &str = "ARQCD_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "arqcd", version, about = "Quickest change detection for AR signals in Gaussian noise")]
pub struct Cli {
    /// Worker threads for Monte-Carlo campaigns (overridden by ARQCD_WORKERS).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a simulated trajectory as CSV.
    Simulate(SimulateArgs),
    /// Run one detector over a trajectory and report the alarm.
    Detect(DetectArgs),
    /// Estimate the average run length to false alarm.
    Arl(ArlArgs),
    /// Estimate the detection delay.
    Delay(DelayArgs),
    /// WADD-vs-ARL curve over a list of gammas and detectors.
    Curve(CurveArgs),
    /// Estimate the drift constant K.
    K(KArgs),
    /// Print the first-order (block) form of a model.
    Lift(LiftArgs),
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Model file (JSON).
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct OgaArgs {
    /// OGA step size.
    #[arg(long, default_value_t = 1e-3)]
    pub beta: f64,
    /// OGA eigenvalue floor for the innovation covariance estimate.
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Keep the OGA filter mean and covariance when the statistic resets.
    #[arg(long)]
    pub keep_filter_on_reset: bool,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ThresholdArg {
    /// Detection threshold c.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// False-alarm budget; sets c = log(gamma).
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Change point: a positive integer or `inf`.
    #[arg(long)]
    pub t0: ChangePoint,
    /// Number of observations.
    #[arg(long)]
    pub len: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Trajectory CSV as written by `simulate`. Without it the trajectory is
    /// simulated from --t0, --len and --seed.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    #[arg(long)]
    pub t0: Option<ChangePoint>,
    #[arg(long)]
    pub len: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// ergodic, stationary or oga.
    #[arg(long)]
    pub detector: String,
    #[command(flatten)]
    pub threshold: ThresholdArg,
    #[command(flatten)]
    pub oga: OgaArgs,
    /// Write the per-step detector trace here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CampaignArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 2000)]
    pub reps: usize,
    /// Longest run per replicate.
    #[arg(long, default_value_t = 10_000)]
    pub horizon: u64,
    /// Master seed (required).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ArlArgs {
    #[command(flatten)]
    pub campaign: CampaignArgs,
    #[arg(long)]
    pub detector: String,
    #[command(flatten)]
    pub threshold: ThresholdArg,
    #[command(flatten)]
    pub oga: OgaArgs,
}

#[derive(Debug, Args)]
pub struct DelayArgs {
    #[command(flatten)]
    pub campaign: CampaignArgs,
    #[arg(long)]
    pub detector: String,
    #[command(flatten)]
    pub threshold: ThresholdArg,
    /// Change point of every replicate.
    #[arg(long, default_value_t = 1)]
    pub t0: u64,
    #[command(flatten)]
    pub oga: OgaArgs,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub campaign: CampaignArgs,
    /// Comma-separated, strictly ascending.
    #[arg(long, value_delimiter = ',', required = true)]
    pub gammas: Vec<f64>,
    /// Comma-separated detector names.
    #[arg(long, value_delimiter = ',', default_value = "ergodic,stationary")]
    pub detectors: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub t0: u64,
    #[command(flatten)]
    pub oga: OgaArgs,
}

#[derive(Debug, Args)]
pub struct KArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Averaging window per replicate.
    #[arg(long, default_value_t = 100_000)]
    pub horizon: u64,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LiftArgs {
    #[command(flatten)]
    pub model: ModelArg,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("arqcd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
