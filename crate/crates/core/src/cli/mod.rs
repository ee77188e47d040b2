//! Command-line surface behind the `smoe` binary.
//!
//! Every subcommand reads the same layered configuration: built-in
//! defaults, then `--config PATH`, then each `--set key=value` in order.
//! Unknown keys are rejected. Commands that take `--out DIR` write a
//! `config.resolved` snapshot there.
//!
//! Exit codes: 0 success, 1 config error, 2 checkpoint error, 3 input
//! error, 4 numeric failure.

pub mod manifest;

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::model::parse_override;
use crate::train::BenchmarkConfig;

pub use commands::{
    cmd_benchmark, cmd_datagen, cmd_eval, cmd_finetune_nbwb, cmd_gradcheck, cmd_infer, cmd_inspect, cmd_train,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_CHECKPOINT: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const RESOLVED_CONFIG: &str = "config.resolved";

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: Error,
}

impl CliError {
    pub fn checkpoint(error: Error) -> Self {
        CliError {
            code: EXIT_CHECKPOINT,
            error,
        }
    }

    pub fn input(error: Error) -> Self {
        CliError { code: EXIT_INPUT, error }
    }
}

impl From<Error> for CliError {
    fn from(error: Error) -> Self {
        let code = match &error {
            Error::Format { context: "checkpoint", .. } => EXIT_CHECKPOINT,
            Error::Input(_) | Error::TooShort { .. } | Error::Limit(_) | Error::Format { .. } | Error::Io(_) => {
                EXIT_INPUT
            }
            Error::Numeric(_) => EXIT_NUMERIC,
            _ => EXIT_CONFIG,
        };
        CliError { code, error }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "smoe", version, about = "Supervised mixture-of-experts speech recognition and translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args, Default)]
pub struct Common {
    /// `key = value` config file applied over the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable and applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Root seed. For `benchmark` it replaces the seed list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TaskArg {
    Asr,
    St,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BandwidthArg {
    Nb,
    Wb,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a dataset: WAV files, target texts and a manifest.
    Datagen {
        #[command(flatten)]
        common: Common,
        /// Number of wideband items; a share of them also get NB twins.
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
    /// Train a model on a manifest directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding manifest.tsv.
        #[arg(long)]
        data: PathBuf,
        /// Train on one task only.
        #[arg(long, value_enum)]
        only: Option<TaskArg>,
    },
    /// Expand a donor's encoder FFNs into bandwidth experts and fine-tune.
    FinetuneNbwb {
        #[command(flatten)]
        common: Common,
        /// Donor checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory holding a mixed NB/WB manifest.
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a checkpoint on a manifest directory.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Only score records of this bandwidth.
        #[arg(long, value_enum)]
        bandwidth: Option<BandwidthArg>,
    },
    /// Decode one WAV file into `ASR:` and `ST:` lines.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        /// Decode one task only.
        #[arg(long, value_enum)]
        single_task: Option<TaskArg>,
        #[arg(long, default_value_t = 64)]
        max_len: usize,
    },
    /// Print trainable and active parameter counts.
    Inspect {
        #[command(flatten)]
        common: Common,
        /// Inspect a checkpoint instead of the configured model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference check of the configured model's gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        #[arg(long, default_value_t = 3)]
        samples: usize,
    },
    /// Run the task-interference benchmark.
    Benchmark {
        #[command(flatten)]
        common: Common,
    },
}

/// Defaults, then the config file, then overrides, then `--seed`.
pub fn resolve_config(common: &Common) -> CliResult<BenchmarkConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::from(Error::Config(format!("{}: {e}", p.display()))))?;
            BenchmarkConfig::from_text(&text)?
        }
        None => BenchmarkConfig::default(),
    };
    for o in &common.overrides {
        let (k, v) = parse_override(o)?;
        if !cfg.set(&k, &v)? {
            return Err(Error::Config(format!("unknown key `{k}`")).into());
        }
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one parsed command, writing human output to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> CliResult<()> {
    match cli.command {
        Command::Datagen { common, n } => cmd_datagen(&common, n, out),
        Command::Train { common, data, only } => cmd_train(&common, &data, only, out),
        Command::FinetuneNbwb {
            common,
            checkpoint,
            data,
        } => cmd_finetune_nbwb(&common, &checkpoint, &data, out),
        Command::Eval {
            common,
            checkpoint,
            data,
            bandwidth,
        } => cmd_eval(&common, &checkpoint, &data, bandwidth, out),
        Command::Infer {
            common,
            checkpoint,
            audio,
            single_task,
            max_len,
        } => cmd_infer(&common, &checkpoint, &audio, single_task, max_len, out),
        Command::Inspect { common, checkpoint } => cmd_inspect(&common, checkpoint.as_deref(), out),
        Command::Gradcheck {
            common,
            tolerance,
            samples,
        } => cmd_gradcheck(&common, tolerance, samples, out),
        Command::Benchmark { common } => cmd_benchmark(&common, out),
    }
}

/// Parses `args`, runs the command, and returns the process exit code.
/// Errors go to stderr; clap's own usage errors exit 1.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
