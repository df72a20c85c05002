//! Batch experimentation CLI: synthetic data generation, training,
//! evaluation, kernel benchmarking, gradient checking, and the
//! generalization split.
//!
//! Exit codes: 0 success, 1 validation/config error, 2 I/O error,
//! 3 failed numeric check.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coact::error::Error;
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "coact",
    about = "Co-action network experiments: planted-interaction data, micro-MLP feature \
             crossing, baselines, AUC reports, and the fused sequence kernel",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to a `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. --set epochs=3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/test files plus an oracle summary.
    Synth(CommonArgs),
    /// Train a model; writes a checkpoint and a per-epoch loss log.
    Train(CommonArgs),
    /// Score a checkpoint, or run the multi-seed variant comparison.
    Eval(CommonArgs),
    /// Benchmark the fused sequence kernel against the reference path.
    Bench(CommonArgs),
    /// End-to-end finite-difference gradient check.
    Gradcheck(CommonArgs),
    /// Partition a test file into seen/unseen feature combinations.
    Split(CommonArgs),
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) => 2,
        Error::Numeric(_) | Error::Metric(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here; keep their conventional exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let (args, run): (&CommonArgs, fn(&RunConfig) -> coact::Result<()>) = match &cli.command {
        Command::Synth(a) => (a, commands::cmd_synth),
        Command::Train(a) => (a, commands::cmd_train),
        Command::Eval(a) => (a, commands::cmd_eval),
        Command::Bench(a) => (a, commands::cmd_bench),
        Command::Gradcheck(a) => (a, commands::cmd_gradcheck),
        Command::Split(a) => (a, commands::cmd_split),
    };

    let cfg = match RunConfig::load(args.config.as_deref(), &args.set) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code_for(&e));
        }
    };
    match run(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
