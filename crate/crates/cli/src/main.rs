//! `vdgns`: one binary with a subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration or usage error,
//! 3 simulation divergence, 4 training divergence, 5 rollout divergence.

mod commands;
mod config;
mod log;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] vdgns::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use vdgns::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::Config(_) => 2,
                E::SimulationDiverged { .. } => 3,
                E::TrainingDiverged { .. } => 4,
                E::RolloutDiverged { .. } => 5,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "vdgns", version = env!("VDGNS_BUILD_ID"), about = "Video-conditioned graph network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.lr=3e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate trajectories, render clips and write a manifest.
    GenData(commands::GenDataArgs),
    /// Render (or re-render) clips for an existing manifest.
    Render(commands::RenderArgs),
    /// Train the vdgns or baseline model.
    Train(commands::TrainArgs),
    /// Predict a trajectory autoregressively from a recorded state.
    Rollout(commands::RolloutArgs),
    /// One-step MSE table and rollout error curves.
    Eval(commands::EvalArgs),
    /// Encodings, variance, separation, PCA, KDE contours and interpolation R².
    Analyze(commands::AnalyzeArgs),
    /// One-step MSE over the sand friction sweep.
    Sweep(commands::SweepArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Render(a) => commands::render(a),
        Command::Train(a) => commands::train(a),
        Command::Rollout(a) => commands::rollout(a),
        Command::Eval(a) => commands::eval(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
