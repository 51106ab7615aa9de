//! `spq` — operator entry point for the KG-guided retrieval-augmented QA
//! pipeline: KG preparation, embedding indexes, batch runs, scoring, and
//! DPO preference-data construction.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{load_file, Overrides, Settings};

const EXIT_HELP: &str = "Exit codes:\n  \
    0  success\n  \
    1  runtime failure\n  \
    2  invalid configuration or corrupt artifact\n  \
    3  no data to work on";

#[derive(Parser)]
#[command(
    name = "spq",
    version,
    about = "KG-guided retrieval-augmented QA, replayable offline",
    after_help = EXIT_HELP,
    propagate_version = true
)]
struct Cli {
    /// TOML config file; flags and SPQ_* env vars override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Replay transcript (JSONL); when set, no network traffic happens.
    #[arg(long, global = true, value_name = "FILE")]
    mock: Option<PathBuf>,

    /// Seed recorded in the effective config so reruns are exact.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Activation depth: a single count ("2") or an inclusive sweep ("1..6").
    #[arg(long, global = true, value_name = "N|A..B")]
    rounds: Option<String>,

    /// Pipeline mode: nor | vanilla_rag | vanilla_qe | kg_infused.
    #[arg(long, global = true)]
    mode: Option<String>,

    /// Root directory for run artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a raw KG dump into a validated snapshot.
    Prep(commands::prep::PrepArgs),
    /// Build or validate embedding vector files.
    Index(commands::index::IndexArgs),
    /// Run a question batch through a pipeline mode.
    Run(commands::run::RunArgs),
    /// Score predictions against gold answers.
    Eval(commands::eval::EvalArgs),
    /// Build a DPO preference dataset from augmentation inputs.
    DpoSample(commands::dpo::DpoArgs),
}

fn dispatch(cli: Cli) -> Result<i32> {
    let file = match load_file(cli.config.as_deref()) {
        Ok(f) => f,
        Err(e) => return commands::config_error(e),
    };
    let overrides = Overrides {
        mock: cli.mock,
        seed: cli.seed,
        rounds: cli.rounds,
        mode: cli.mode,
        out: cli.out,
    };
    let settings = match Settings::resolve(&overrides, &file) {
        Ok(s) => s,
        Err(e) => return commands::config_error(e),
    };
    log::debug!("effective config: {}", settings.effective_json());
    match cli.command {
        Command::Prep(args) => commands::prep::run(&args, &settings),
        Command::Index(args) => commands::index::run(&args, &settings),
        Command::Run(args) => commands::run::run(&args, &settings),
        Command::Eval(args) => commands::eval::run(&args, &settings),
        Command::DpoSample(args) => commands::dpo::run(&args, &settings),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
