//! `eaclutch`: simulate, sweep, fit, analyze and bode commands.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<eaclutch::Error> for CliError {
    fn from(e: eaclutch::Error) -> Self {
        match e {
            eaclutch::Error::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eaclutch", version, about = "Electroadhesive clutch simulation and trace analysis")]
pub struct Cli {
    /// Config JSON file, or `nominal` for the bundled defaults.
    #[arg(long, global = true, default_value = "nominal")]
    pub config: String,
    /// Dot-path override, e.g. `drive.amplitude=250`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SimKind {
    Engage,
    Release,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum FitKind {
    ColeCole,
    Contact,
    Lambda,
    VoltageExponent,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReleaseLevel {
    Ninety,
    Ten,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Engagement or release simulation: trace CSV and summary JSON.
    Simulate {
        #[arg(value_enum)]
        kind: SimKind,
        /// Engagement: gap fraction that counts as engaged. Release: initial
        /// load-cell force as a fraction of capacity.
        #[arg(long)]
        threshold: Option<f64>,
        /// Release level reported as the release time.
        #[arg(long, value_enum)]
        metric: Option<ReleaseLevel>,
    },
    /// Cross-product parameter sweep, or several sweeps from a spec file.
    Sweep {
        /// `axis=v1,v2,...`; repeat for a multi-axis grid. Axes: voltage,
        /// width, thickness, length, tau_rise, tau_fall, frequency, preload.
        #[arg(long = "axis", value_name = "AXIS=VALUES")]
        axes: Vec<String>,
        #[arg(long, value_enum, default_value = "engage")]
        metric: SimKind,
        /// JSON sweep list, or `design` for the bundled eight sweeps.
        #[arg(long, conflicts_with = "axes")]
        spec: Option<String>,
    },
    /// Parameter fit from a two-column CSV.
    Fit {
        #[arg(value_enum)]
        kind: FitKind,
        #[arg(long)]
        data: PathBuf,
    },
    /// Batch metrics for measured force traces.
    Analyze {
        #[arg(required = false)]
        files: Vec<PathBuf>,
        /// Low-pass cutoff in Hz applied before engagement extraction.
        #[arg(long)]
        cutoff: Option<f64>,
    },
    /// Shear capacity versus drive frequency.
    Bode {
        /// Comma-separated frequencies in Hz.
        #[arg(long, value_delimiter = ',', conflicts_with = "range")]
        freqs: Vec<f64>,
        /// `fmin:fmax:n`, log-spaced.
        #[arg(long)]
        range: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Runtime(_) => 1,
            })
        }
    }
}
