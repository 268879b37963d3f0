//! `ace`: dataset generation, training, evaluation, gradient checks and
//! benchmarks for the aggregation cross-entropy loss.
//!
//! Exit codes: 0 success, 1 failed check or runtime error, 2 usage or
//! parameter error.

mod check;
mod data;

use std::process::ExitCode;

use ace_core::bench::CountingAlloc;
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Parser)]
#[command(name = "ace", version, about = "Aggregation cross-entropy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as line-delimited JSON.
    GenData(data::GenDataArgs),
    /// Evaluate one loss on random logits.
    Loss(check::LossArgs),
    /// Compare analytic logit gradients with finite differences.
    GradCheck(check::GradCheckArgs),
    /// Train the toy model on a dataset file.
    Train(data::TrainArgs),
    /// Evaluate a saved model on a dataset file.
    Eval(data::EvalArgs),
    /// Time ACE and CTC on identical random inputs.
    Bench(check::BenchArgs),
    /// Train under several annotation shuffle ratios.
    ShuffleExp(check::ShuffleArgs),
}

/// First output line of every command: the command name and its flags.
pub(crate) fn header(command: &str, flags: &impl Serialize) -> Result<String> {
    let value = serde_json::json!({ "command": command, "flags": flags });
    Ok(serde_json::to_string(&value)?)
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("ACE_SEQ_THREADS") {
        let threads: usize = value.parse().with_context(|| format!("ACE_SEQ_THREADS={value:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::GenData(args) => data::gen_data(&args).map(|()| true),
        Command::Loss(args) => check::loss(&args).map(|()| true),
        Command::GradCheck(args) => check::grad_check(&args),
        Command::Train(args) => data::train(&args).map(|()| true),
        Command::Eval(args) => data::eval(&args).map(|()| true),
        Command::Bench(args) => check::bench(&args).map(|()| true),
        Command::ShuffleExp(args) => check::shuffle_exp(&args).map(|()| true),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use ace_core::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::InvalidInput(_) | E::Vocabulary(_) | E::Capacity(_) | E::Size(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
