#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use paragate::device::DeviceConfig;

#[derive(Parser)]
#[command(name = "paragate", version, about = "Parametric-gate simulation, calibration and characterization")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Device description (JSON, MHz / us). Defaults to the bundled device.
    #[arg(long, global = true, value_name = "FILE")]
    pub device: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_name = "DIR", default_value = "paragate-run")]
    pub out: PathBuf,
    /// Print the resolved parameters and exit.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Resonance frequency and effective coupling against modulation amplitude.
    ResonanceMap(commands::ResonanceMapArgs),
    /// Population transfer over modulation frequency and pulse duration.
    Chevron(commands::ChevronArgs),
    /// Calibrate one gate and write its recipe.
    Calibrate(commands::CalibrateArgs),
    /// Process tomography and/or interleaved RB of a calibrated gate.
    Characterize(commands::CharacterizeArgs),
    /// Interleaved RB with ideal or simulated natives and optional injected error.
    Rb(commands::RbArgs),
}

#[derive(Debug)]
pub enum CliError {
    /// Bad input; nothing was computed.
    Config(String),
    /// Failure while running.
    Run(String),
}

impl From<paragate::Error> for CliError {
    fn from(e: paragate::Error) -> Self {
        match e {
            paragate::Error::InvalidParameter(_) | paragate::Error::UnknownTransition(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Run(other.to_string()),
        }
    }
}

pub fn load_device(common: &Common) -> Result<DeviceConfig, CliError> {
    let cfg = match &common.device {
        None => DeviceConfig::paper(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read device file {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("invalid device file {}: {e}", path.display())))?
        }
    };
    cfg.to_params().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = &cli.common;
    match &cli.command {
        Command::ResonanceMap(a) => commands::resonance_map(common, a),
        Command::Chevron(a) => commands::chevron(common, a),
        Command::Calibrate(a) => commands::calibrate(common, a),
        Command::Characterize(a) => commands::characterize(common, a),
        Command::Rb(a) => commands::rb(common, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.common.workers == Some(0) {
        eprintln!("error: --workers must be at least 1");
        return ExitCode::from(2);
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.common.workers {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
