//! Command-line front end: config handling and the `dsca` subcommands.

mod commands;
mod config;
mod report;

pub use commands::{cmd_ablate, cmd_eval, cmd_export_attn, cmd_gradcheck, cmd_synth, cmd_train};
pub use config::{GradcheckSettings, RunConfig, KEYS};
pub use report::{km_csv, km_svg, Stratification};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::data::DataError;
use crate::net::NetError;
use crate::survival::SurvivalError;
use crate::train::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, flags or input files. Exit code 1.
    #[error("{0}")]
    Config(String),
    /// Failure while running. Exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Data(d) => d.into(),
            NetError::NonFinite(_) | NetError::Autodiff(_) | NetError::Survival(_) | NetError::Io { .. } => {
                CliError::Runtime(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Net(n) => n.into(),
            TrainError::Data(d) => d.into(),
            TrainError::InvalidConfig(_) | TrainError::EmptyTrainSet => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SurvivalError> for CliError {
    fn from(e: SurvivalError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    crate::write_atomic(path, text.as_bytes()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

#[derive(Debug, Parser)]
#[command(name = "dsca", version, about = "Dual-stream cross-attention survival models on token bags")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for data generation, splits, initialization and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override a config key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort (bags and manifest).
    Synth,
    /// Cross-validate on the cohort named by `manifest`.
    Train,
    /// Score a cohort with a saved parameter file.
    Eval,
    /// Finite-difference check of the network gradients.
    Gradcheck {
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Export cross-attention and global attention weights for one bag.
    ExportAttn,
    /// Cross-validate every entry of `variants`.
    Ablate,
}

/// Builds the effective config: defaults, then the file, then `--seed`,
/// `--out` and `--set` overrides in order.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let text = match &cli.command {
        Command::Synth => cmd_synth(&cfg)?,
        Command::Train => cmd_train(&cfg)?,
        Command::Eval => cmd_eval(&cfg)?,
        Command::Gradcheck { corrupt_backward } => cmd_gradcheck(&cfg, *corrupt_backward)?,
        Command::ExportAttn => cmd_export_attn(&cfg)?,
        Command::Ablate => cmd_ablate(&cfg)?,
    };
    print!("{text}");
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
