//! `dictnet`: train, evaluate and query a unified reverse-dictionary and
//! definition-modelling network.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dictnet_core::exec::Execution;
use dictnet_core::inference::DecodeParams;

use commands::{eval, gradcheck, query, train, vocab};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "dictnet",
    version,
    about = "Reverse dictionary and definition modelling in one network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Decode {
    #[arg(long, default_value_t = 6)]
    beam_size: usize,
    /// Maximum generated tokens per definition.
    #[arg(long, default_value_t = 32)]
    max_len: usize,
}

impl Decode {
    fn params(&self) -> DecodeParams {
        DecodeParams {
            beam_size: self.beam_size,
            max_len: self.max_len,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a key = value config file.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config value, e.g. `--set train.lr=0.001`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on a test set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum)]
        mode: eval::Mode,
        /// Candidate words and vectors (required for revdic).
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
        #[command(flatten)]
        decode: Decode,
        #[arg(long)]
        lowercase: bool,
        #[arg(long, default_value = "parallel")]
        execution: Execution,
    },
    /// Interactive lookups in both directions, or a batch of them.
    Query {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        #[command(flatten)]
        decode: Decode,
        #[arg(long)]
        lowercase: bool,
        /// Append every query and answer to this file.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Answer the JSON-lines queries in this file instead of the REPL.
        #[arg(long)]
        batch: Option<PathBuf>,
        /// Where batch results go (stdout by default).
        #[arg(long, requires = "batch")]
        out: Option<PathBuf>,
    },
    /// Build a vocabulary from the definitions of a dataset.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "unigram")]
        kind: vocab::Kind,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lowercase: bool,
    },
    /// Check every differentiable operation against finite differences.
    GradCheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            overrides,
            resume,
        } => train::run(&train::TrainArgs {
            config,
            overrides,
            resume,
        }),
        Command::Eval {
            checkpoint,
            test,
            mode,
            table,
            out,
            decode,
            lowercase,
            execution,
        } => eval::run(&eval::EvalArgs {
            checkpoint,
            test,
            mode,
            table,
            out,
            decode: decode.params(),
            lowercase,
            execution,
        }),
        Command::Query {
            checkpoint,
            table,
            top_k,
            decode,
            lowercase,
            transcript,
            batch,
            out,
        } => query::run(&query::QueryArgs {
            checkpoint,
            table,
            top_k,
            decode: decode.params(),
            lowercase,
            transcript,
            batch,
            out,
        }),
        Command::BuildVocab {
            corpus,
            kind,
            size,
            out,
            lowercase,
        } => vocab::run(&vocab::VocabArgs {
            corpus,
            kind,
            size,
            out,
            lowercase,
        }),
        Command::GradCheck { seed, corrupt } => gradcheck::run(&gradcheck::GradCheckArgs { seed, corrupt }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
