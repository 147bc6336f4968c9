//! `graphocog`: synthesize cohorts, build spectrogram caches, run
//! patient-grouped cross-validation and the window, channel and task
//! sweeps.
//!
//! Exit codes: 0 ok, 1 config, 2 io, 3 data, 4 cohort, 5 shape.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use config::{Opts, RunConfig, CACHE_ENV};
use error::{CliError, EXIT_CONFIG};

#[derive(Debug, Parser)]
#[command(name = "graphocog", version, about = "Handwriting spectrogram classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic cohort (recordings/ and manifest.jsonl) to --out
    Synth(Opts),
    /// Build the spectrogram cache for a manifest and print input shapes
    Preprocess(Opts),
    /// Cross-validate one experiment and write report.json
    Run(Opts),
    /// Cross-validate each frame window (and model)
    SweepWindows(Opts),
    /// Cross-validate each channel combination on the fixed-size CNN
    SweepChannels(Opts),
    /// Cross-validate each task and task family
    SweepTasks(Opts),
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let (opts, run): (&Opts, fn(&RunConfig) -> Result<(), CliError>) = match &cli.command {
        Command::Synth(o) => (o, commands::cmd_synth),
        Command::Preprocess(o) => (o, commands::cmd_preprocess),
        Command::Run(o) => (o, commands::cmd_run),
        Command::SweepWindows(o) => (o, commands::cmd_sweep_windows),
        Command::SweepChannels(o) => (o, commands::cmd_sweep_channels),
        Command::SweepTasks(o) => (o, commands::cmd_sweep_tasks),
    };
    let values = opts.layered(std::env::var(CACHE_ENV).ok())?;
    let cfg = RunConfig::resolve(&values)?;
    run(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_CONFIG),
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
