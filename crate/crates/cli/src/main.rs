//! `longclin` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 non-finite numbers during training or inference.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

#[derive(Parser)]
#[command(name = "longclin", version, about = "Long-context clinical text classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// JSON config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; subsystem seeds are derived from it.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory (generate, train) or file (other commands).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "K=V")]
    pub set: Vec<String>,
    /// Worker thread cap; results do not depend on it.
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Also print the main JSON result to standard output.
    #[arg(long)]
    pub stdout: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/validation/test corpus.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Template file; the built-in templates when absent.
        #[arg(long, value_name = "PATH")]
        templates: Option<PathBuf>,
    },
    /// Train a classifier and write a checkpoint, log and validation metrics.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a dataset with a trained checkpoint.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory written by `train`.
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        /// Dataset JSON; labels are not required.
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Probability cut-off for a positive call.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Evaluate a predictions file against a labeled dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        predictions: PathBuf,
        /// Labeled dataset JSON.
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Lexicon for complexity strata; the built-in lexicon when absent.
        #[arg(long, value_name = "PATH")]
        lexicon: Option<PathBuf>,
    },
    /// Paired comparison of two predictions files on the same labeled cases.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Predictions of the reference model.
        #[arg(long, value_name = "PATH")]
        a: PathBuf,
        /// Predictions of the candidate model.
        #[arg(long, value_name = "PATH")]
        b: PathBuf,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        lexicon: Option<PathBuf>,
    },
    /// Train and evaluate a cumulative ladder of configuration phases.
    Phases {
        #[command(flatten)]
        common: Common,
        /// Phase spec JSON; the default eight-phase ladder when absent.
        #[arg(long, value_name = "PATH")]
        phases: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();

    let result = match cli.command {
        Command::Generate { common, templates } => commands::generate(&common, templates.as_deref()),
        Command::Train { common } => commands::train(&common),
        Command::Predict {
            common,
            checkpoint,
            data,
            threshold,
        } => commands::predict(&common, &checkpoint, &data, threshold),
        Command::Evaluate {
            common,
            predictions,
            data,
            lexicon,
        } => commands::evaluate(&common, &predictions, &data, lexicon.as_deref()),
        Command::Compare {
            common,
            a,
            b,
            data,
            lexicon,
        } => commands::compare(&common, &a, &b, &data, lexicon.as_deref()),
        Command::Phases { common, phases } => commands::phases(&common, phases.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{}", f.message());
            ExitCode::from(f.code())
        }
    }
}
