//! Experiment driver behind the `pcrm` binary: data generation, every
//! training mode, evaluation, scatter export and the β sweep, all reading
//! one flat config file and writing into one run directory.

pub mod commands;
pub mod config;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or config; exit code 2.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("missing input {}: {hint}", path.display())]
    MissingArtifact { path: PathBuf, hint: String },
    #[error(transparent)]
    Core(#[from] pcrm::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Rm,
    Pcrm,
    Dpo,
    Pcdpo,
    Sft,
    Align,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Rm => "rm",
            Mode::Pcrm => "pcrm",
            Mode::Dpo => "dpo",
            Mode::Pcdpo => "pcdpo",
            Mode::Sft => "sft",
            Mode::Align => "align",
        }
    }

    pub fn constrained(self) -> bool {
        matches!(self, Mode::Pcrm | Mode::Pcdpo)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pcrm",
    version,
    about = "Prior-constrained reward modeling experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat key=value config file; every key is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory holding data splits, checkpoints and reports.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct Target {
    /// Evaluate the checkpoint this mode produced under the same config.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Evaluate this checkpoint file instead (reward model, policy, or truth).
    #[arg(long, conflicts_with = "mode")]
    pub checkpoint: Option<PathBuf>,
    /// Preference data to score (default: the run's test split).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/validation/test splits and the hidden reward.
    Generate(Common),
    /// Train one model and write its checkpoint and metrics CSV.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Score a checkpoint and write the JSON report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
        /// Also write the margin-vs-similarity table (optionally to PATH).
        #[arg(long, num_args = 0..=1, value_name = "PATH")]
        scatter: Option<Option<PathBuf>>,
    },
    /// Train a constrained reward model per (β1, β3) cell and tabulate accuracy.
    Sweep(Common),
    /// Write only the margin-vs-similarity table of a checkpoint.
    ExportScatter {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
        #[arg(long, value_name = "PATH")]
        scatter: Option<PathBuf>,
    },
    /// generate, sft, rm, pcrm, align and eval in one go.
    Pipeline(Common),
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.set("seed", seed.to_string())?;
    }
    Ok(config)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(c) => commands::generate(&load_config(&c)?, &c.out),
        Command::Train { common, mode } => {
            commands::train(&load_config(&common)?, &common.out, mode).map(|_| ())
        }
        Command::Eval {
            common,
            target,
            scatter,
        } => commands::eval(&load_config(&common)?, &common.out, &target, scatter).map(|_| ()),
        Command::Sweep(c) => commands::sweep(&load_config(&c)?, &c.out).map(|_| ()),
        Command::ExportScatter {
            common,
            target,
            scatter,
        } => commands::export_scatter(&load_config(&common)?, &common.out, &target, scatter)
            .map(|_| ()),
        Command::Pipeline(c) => commands::pipeline(&load_config(&c)?, &c.out),
    }
}
