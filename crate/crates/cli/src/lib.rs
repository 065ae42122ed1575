//! Command-line layer over `tcsim`: config parsing, run manifests and
//! plot-ready output files.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("unreadable input: {0}")]
    Format(String),
    #[error("missing channel `{0}`")]
    MissingChannel(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for anything the user can fix in the inputs, 3 for numerical
    /// failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Format(_) | CliError::MissingChannel(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tcsim", version, about = "Driven-dissipative four-level ensemble simulator")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Recorded in the manifest; the simulation itself is deterministic.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum TraceFormat {
    #[default]
    Csv,
    Binary,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one configuration and write its trace.
    Simulate {
        #[arg(long, value_enum, default_value_t)]
        format: TraceFormat,
    },
    /// Spectrum, peaks and optional fit/phase/autocorrelation of a trace.
    Analyze {
        /// Trace file (CSV or binary).
        trace: PathBuf,
        /// Overrides the channel named in the analysis config.
        #[arg(long)]
        channel: Option<String>,
        /// Write SVG plots as well.
        #[arg(long)]
        plots: bool,
    },
    /// Run and classify every point of a sweep grid.
    Sweep,
    /// Label a trace with its dynamical phase.
    Classify {
        trace: PathBuf,
        #[arg(long)]
        channel: Option<String>,
    },
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { format } => commands::simulate(cli, *format),
        Command::Analyze { trace, channel, plots } => commands::analyze(cli, trace, channel.as_deref(), *plots),
        Command::Sweep => commands::sweep(cli),
        Command::Classify { trace, channel } => commands::classify(cli, trace, channel.as_deref()),
    }
}
