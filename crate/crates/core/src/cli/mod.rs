//! The `melt` command-line front end.
//!
//! Workdir layout:
//!
//! ```text
//! <workdir>/config.json        effective configuration
//! <workdir>/data/              filtered log, split, partition, index, stats
//! <workdir>/checkpoints/       pretrain.ckpt, melt.ckpt and per-epoch *-latest.ckpt
//! <workdir>/logs/              pretrain.jsonl, melt.jsonl
//! <workdir>/reports/           <checkpoint>-<target>-seed<seed>.{json,summary.csv,cells.csv}
//! ```

mod commands;
mod config;
mod workdir;

pub use self::commands::{
    cmd_evaluate, cmd_prepare, cmd_pretrain, cmd_report, cmd_synth, cmd_train, DatasetStats,
    EvaluateArgs, PrepareArgs, TrainArgs,
};
pub use self::config::{RunConfig, SCHEMA_VERSION};
pub use self::workdir::{Prepared, Workdir, WorkdirLock};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::eval::Target;
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Process exit code for `err`.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Data(_) | Error::Io { .. } | Error::Checkpoint(_) => EXIT_DATA,
        Error::Model(_) | Error::Train(_) | Error::Eval(_) => EXIT_NUMERIC,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "melt",
    version,
    about = "Long-tail sequential recommendation with bilateral enhancement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic long-tailed interaction log.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter, split, partition and index an interaction log.
    Prepare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, env = "MELT_WORKDIR")]
        workdir: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        include_reversed: Option<bool>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train the backbone encoder.
    Pretrain {
        #[arg(long, env = "MELT_WORKDIR")]
        workdir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        from_checkpoint: Option<PathBuf>,
        /// Stop after this many epochs in this invocation.
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Fine-tune the pretrained backbone with both enhancement branches.
    Train {
        #[arg(long, env = "MELT_WORKDIR")]
        workdir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        from_checkpoint: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Rank held-out items and write JSON and CSV reports.
    Evaluate {
        #[arg(long, env = "MELT_WORKDIR")]
        workdir: PathBuf,
        /// Checkpoint path, or `pretrain` / `melt` for the workdir's final ones.
        #[arg(long, default_value = "melt")]
        checkpoint: String,
        #[arg(long, value_enum, default_value = "test")]
        target: TargetArg,
        #[arg(long)]
        seed: Option<u64>,
        /// Score with plain embeddings even for a fine-tuned checkpoint.
        #[arg(long)]
        backbone: bool,
    },
    /// Render the summary tables of every report, averaged across seeds.
    Report {
        #[arg(long, env = "MELT_WORKDIR")]
        workdir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum TargetArg {
    Validation,
    Test,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Validation => Target::Validation,
            TargetArg::Test => Target::Test,
        }
    }
}

fn dispatch(command: Command) -> crate::Result<()> {
    match command {
        Command::Synth { config, out } => {
            let path = cmd_synth(config.as_deref(), &out)?;
            println!("wrote {}", path.display());
        }
        Command::Prepare {
            data,
            workdir,
            alpha,
            include_reversed,
            config,
            force,
        } => {
            let stats = cmd_prepare(&PrepareArgs {
                data,
                workdir,
                alpha,
                include_reversed,
                config,
                force,
            })?;
            println!("{}", stats.table());
        }
        Command::Pretrain {
            workdir,
            config,
            from_checkpoint,
            max_epochs,
        } => {
            let best = cmd_pretrain(&TrainArgs {
                workdir,
                config,
                from_checkpoint,
                max_epochs,
            })?;
            println!(
                "best validation epoch: {}",
                best.map_or("none".into(), |e| e.to_string())
            );
        }
        Command::Train {
            workdir,
            config,
            from_checkpoint,
            max_epochs,
        } => {
            let best = cmd_train(&TrainArgs {
                workdir,
                config,
                from_checkpoint,
                max_epochs,
            })?;
            println!(
                "best validation epoch: {}",
                best.map_or("none".into(), |e| e.to_string())
            );
        }
        Command::Evaluate {
            workdir,
            checkpoint,
            target,
            seed,
            backbone,
        } => {
            let path = cmd_evaluate(&EvaluateArgs {
                workdir,
                checkpoint,
                target: target.into(),
                seed,
                backbone,
            })?;
            println!("wrote {}", path.display());
        }
        Command::Report { workdir } => print!("{}", cmd_report(&workdir)?),
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
