//! `plateid`: forward sweeps, modal analysis, synthetic data and parameter
//! identification for clamped damped plates.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 solver failure,
//! 4 result outside the configured thresholds.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{AccelModeArg, RunConfig};

#[derive(Parser)]
#[command(
    name = "plateid",
    version,
    about = "Vibration response and modulus identification of clamped plates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// TOML run configuration; defaults describe the steel strip.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Overrides the noise and differential-evolution seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long)]
    pub threads: Option<usize>,
    /// How the accelerometer mass is modelled.
    #[arg(long, value_enum)]
    pub accel_mode: Option<AccelModeArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the strip mesh.
    Mesh(Common),
    /// Frequency sweep of the AFC at the reference material.
    Forward(Common),
    /// Natural frequencies and decay factors.
    Modes(Common),
    /// Synthetic reference data with optional noise.
    Synth(Common),
    /// Trust-region fit from a given starting point.
    FitLocal(Common),
    /// Differential evolution with restarts, then trust-region polishing.
    FitGlobal(Common),
    /// Compare exact derivatives of the loss with finite differences.
    CheckGrad {
        #[command(flatten)]
        common: Common,
        /// Comma-separated parameter vector (defaults to the reference).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta: Option<Vec<f64>>,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const CONFIG: u8 = 2;
    pub const SOLVER: u8 = 3;
    pub const THRESHOLD: u8 = 4;

    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            code: Self::CONFIG,
            message: msg.into(),
        }
    }

    pub fn threshold(msg: impl Into<String>) -> Self {
        CliError {
            code: Self::THRESHOLD,
            message: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<plateid::Error> for CliError {
    fn from(e: plateid::Error) -> Self {
        use plateid::Error as E;
        let solver = |e: &E| {
            matches!(
                e,
                E::Singular { .. } | E::Inaccurate { .. } | E::EigenNoConvergence(_)
            )
        };
        let code = match &e {
            E::AtFrequency { source, .. } if solver(source) => Self::SOLVER,
            e if solver(e) => Self::SOLVER,
            _ => Self::CONFIG,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::config(e.to_string())
    }
}

fn setup(common: &Common) -> Result<RunConfig, CliError> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.noise.seed = s;
        cfg.de.seed = s;
    }
    if let Some(m) = common.accel_mode {
        cfg.geometry.accel_mode = m;
    }
    if let Some(o) = &common.out {
        cfg.paths.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Mesh(c) => commands::mesh(&setup(&c)?),
        Command::Forward(c) => commands::forward(&setup(&c)?),
        Command::Modes(c) => commands::modes(&setup(&c)?),
        Command::Synth(c) => commands::synth(&setup(&c)?),
        Command::FitLocal(c) => commands::fit_local(&setup(&c)?),
        Command::FitGlobal(c) => commands::fit_global(&setup(&c)?),
        Command::CheckGrad { common, theta } => commands::check_grad(&setup(&common)?, theta),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
