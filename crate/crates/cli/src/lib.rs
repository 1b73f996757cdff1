//! `embryocap` command-line pipeline: ingest → split → preprocess → caption →
//! plan → serve → aggregate → report.

pub mod commands;
pub mod config;
pub mod server;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ConfigError, Layout, PipelineConfig};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const RUNTIME: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Validation(String),
    #[error("MissingAggregate: `{}` not found; run `embryocap aggregate` first", .0.display())]
    MissingAggregate(PathBuf),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Config(_) | CliError::Validation(_) | CliError::MissingAggregate(_) => exit::VALIDATION,
            CliError::Runtime(_) => exit::RUNTIME,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<embryocap::dataset::DatasetError> for CliError {
    fn from(e: embryocap::dataset::DatasetError) -> Self {
        match e {
            embryocap::dataset::DatasetError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<embryocap::SessionError> for CliError {
    fn from(e: embryocap::SessionError) -> Self {
        match e {
            embryocap::SessionError::Store(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<embryocap::gateway::GatewayError> for CliError {
    fn from(e: embryocap::gateway::GatewayError) -> Self {
        match e {
            embryocap::gateway::GatewayError::Config(_) | embryocap::gateway::GatewayError::NoTestFrames => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<embryocap::gateway::StoreError> for CliError {
    fn from(e: embryocap::gateway::StoreError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<embryocap::MetricError> for CliError {
    fn from(e: embryocap::MetricError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<embryocap::report::ReportError> for CliError {
    fn from(e: embryocap::report::ReportError) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "embryocap", version, about = "Embryo caption evaluation pipeline")]
pub struct Cli {
    /// Pipeline config file.
    #[arg(long, global = true, default_value = "embryocap.toml")]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Manifest to read: the ingested manifest for `split`, the split manifest otherwise.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate the source table and write the ingested manifest.
    Ingest,
    /// Assign train/test splits and nested training subsets.
    Split,
    /// Pad and resize every frame to 448×448.
    Preprocess,
    /// Collect captions for the test split from the configured models.
    Caption {
        /// Only caption with these model ids.
        #[arg(long = "provider")]
        providers: Vec<String>,
    },
    /// Plan the blinded scoring session.
    Plan,
    /// Host the scoring API until interrupted.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Export session scores and compute per-model and per-variable aggregates.
    Aggregate,
    /// Render report tables from the aggregates.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Split => "split",
            Command::Preprocess => "preprocess",
            Command::Caption { .. } => "caption",
            Command::Plan => "plan",
            Command::Serve { .. } => "serve",
            Command::Aggregate => "aggregate",
            Command::Report => "report",
        }
    }
}

/// Parses arguments, runs one command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("EMBRYOCAP_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .try_init();
    match commands::run(&cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
