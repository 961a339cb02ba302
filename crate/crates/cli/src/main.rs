mod commands;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qkdloop_core::rates::ProtocolKind;

/// Closed-loop QKD workbench: key-rate models, channel simulation, forecaster
/// and policy training, controller evaluation.
#[derive(Debug, Parser)]
#[command(name = "qkdloop", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration; defaults are used for anything it leaves out.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Single run seed.
    #[arg(long, global = true, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Seed range `N..M` (inclusive) or comma list.
    #[arg(long, global = true, value_name = "N..M")]
    pub seeds: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum)]
    pub protocol: Option<ProtocolArg>,
    #[arg(long, global = true)]
    pub scenario: Option<String>,
    #[arg(long, global = true)]
    pub blocks: Option<usize>,
    /// Config override `section.key=value`, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    Bb84,
    E91,
    Cow,
}

impl From<ProtocolArg> for ProtocolKind {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Bb84 => ProtocolKind::Bb84Decoy,
            ProtocolArg::E91 => ProtocolKind::E91,
            ProtocolArg::Cow => ProtocolKind::Cow,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Key-rate table over a distance grid.
    Rates {
        #[arg(long, default_value_t = 0.0)]
        from_km: f64,
        #[arg(long, default_value_t = 200.0)]
        to_km: f64,
        #[arg(long, default_value_t = 5.0)]
        step_km: f64,
        /// Interferometer phase offset for COW, radians.
        #[arg(long, default_value_t = 0.0)]
        dphi: f64,
    },
    /// Telemetry of a scenario under fixed nominal settings.
    Simulate,
    /// Train the forecaster or the policy.
    Train {
        #[arg(value_enum)]
        target: TrainTarget,
        /// Train the policy on the one-step toy problem instead.
        #[arg(long)]
        toy: bool,
        /// Forecaster checkpoint for policy training (default: OUT/tcn.json).
        #[arg(long, value_name = "PATH")]
        tcn: Option<PathBuf>,
        /// Update budget of the toy run.
        #[arg(long, default_value_t = 200)]
        max_updates: usize,
    },
    /// Run controllers on a scenario and summarize.
    Eval {
        /// Comma-separated controllers: ml, static, recalib.
        #[arg(long, default_value = "ml,static,recalib")]
        controllers: String,
        #[arg(long, value_name = "PATH")]
        tcn: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        ppo: Option<PathBuf>,
    },
    /// Print the effective configuration.
    ShowConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainTarget {
    Tcn,
    Ppo,
}

/// Error caused by the invocation rather than by the run.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
