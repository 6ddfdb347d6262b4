//! Command-line front end for the completion pipeline: `gen` builds a
//! synthetic dataset, `train` fits the network, `eval` scores a
//! checkpoint on the test split, and `complete` rewrites a scene cloud
//! with completed objects. Every command reads one JSON run
//! configuration and prints a single JSON summary record on success.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure during training.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use vcn_core::pipeline::{cmd_complete, cmd_eval, cmd_gen, cmd_train, PipelineError, RunConfig};

#[derive(Parser)]
#[command(name = "vcn", version, about = "Viewer-centred car point cloud completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct Common {
    /// JSON run configuration; built-in defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the configured one.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of partial and complete car pairs.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Dataset root to write, overriding the configured data_dir.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train the completion network on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory for checkpoints and the loss log, overriding the
        /// configured out_dir.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Resume from this checkpoint instead of initializing fresh.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a trained checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Directory for the metrics report, overriding the configured
        /// out_dir.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Skip objects observed with fewer points than this.
        #[arg(long, value_name = "N")]
        min_points: Option<usize>,
    },
    /// Replace masked objects of a scene cloud with completed surfaces.
    Complete {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to run.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Scene point cloud, ascii PLY.
        #[arg(long, value_name = "PLY")]
        input: PathBuf,
        /// Per-object point index lists, JSON.
        #[arg(long, value_name = "PATH")]
        masks: PathBuf,
        /// Augmented cloud to write.
        #[arg(long, value_name = "PLY")]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// One JSON record per run keeps the output scriptable.
fn emit<T: serde::Serialize>(summary: &T) {
    println!("{}", serde_json::to_string(summary).expect("summary serializes"));
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Gen { common, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(dir) = out {
                cfg.data_dir = dir;
            }
            emit(&cmd_gen(&cfg)?);
        }
        Command::Train { common, out, checkpoint } => {
            let mut cfg = load_config(&common)?;
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            emit(&cmd_train(&cfg, checkpoint.as_deref())?);
        }
        Command::Eval { common, checkpoint, out, min_points } => {
            let mut cfg = load_config(&common)?;
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            if let Some(n) = min_points {
                cfg.eval.min_points = n;
            }
            emit(&cmd_eval(&cfg, &checkpoint)?);
        }
        Command::Complete { common, checkpoint, input, masks, out } => {
            let cfg = load_config(&common)?;
            emit(&cmd_complete(&cfg, &checkpoint, &input, &masks, &out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // --help and --version land here as well; only real parse
        // failures go to stderr and exit 1.
        Err(e) => {
            let failed = e.use_stderr();
            let _ = e.print();
            return if failed { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
