//! `dr`: reinforce a dataset once, then train students from the stored
//! reinforcements.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dr", version, about = "Dataset reinforcement at desk scale")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

/// Options shared by config-driven commands.
#[derive(clap::Args)]
pub struct ConfigArgs {
    /// Run configuration (`section.key = value` lines).
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set train.epochs=5` (repeatable).
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic desk dataset as train.dimg / val.dimg.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        train: usize,
        #[arg(long, default_value_t = 1000)]
        val: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Image side length.
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
    },
    /// Generate a reinforcement store from a dataset and a teacher checkpoint.
    Reinforce(ConfigArgs),
    /// Train a model under one objective; writes a checkpoint and history.
    Train(ConfigArgs),
    /// Print a store header, its byte math and optionally one image's records.
    Inspect {
        store: PathBuf,
        /// Dump the records of this image.
        #[arg(long)]
        image: Option<u64>,
        /// Decode and check every record.
        #[arg(long)]
        validate: bool,
    },
    /// Summary statistics of a store as JSON.
    Stats { store: PathBuf },
    /// Run the acceptance experiments and write the report.
    Report {
        /// Small configuration for a fast smoke run.
        #[arg(long)]
        quick: bool,
        /// Output directory for report.md / report.csv / report.json.
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Only these criteria (comma separated ids).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        /// Exit with status 1 when a blocking criterion fails.
        #[arg(long)]
        strict: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Synth { out, train, val, seed, size, channels } => {
            commands::synth(&out, train, val, seed, size, channels)
        }
        Command::Reinforce(args) => commands::reinforce(&args),
        Command::Train(args) => commands::train(&args),
        Command::Inspect { store, image, validate } => commands::inspect(&store, image, validate),
        Command::Stats { store } => commands::stats(&store),
        Command::Report { quick, out, only, strict } => commands::report(quick, &out, &only, strict),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
