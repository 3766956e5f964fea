//! `embkit`: curate training pairs, train the hashed encoder, evaluate
//! encoders on task directories, and generate synthetic benchmarks.

mod curate;
mod encoders;
mod eval;
mod manifest;
mod serve;
mod synth;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "embkit",
    version,
    about = "Text-embedding training and evaluation toolkit"
)]
struct Cli {
    /// Worker threads for encoding, evaluation and curation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract text pairs from structured documents and filter them.
    Curate(curate::Args),
    /// Train the hashed encoder (one stage or the full recipe).
    Train(train::Args),
    /// Evaluate an encoder on every dataset in a task directory.
    Eval(eval::Args),
    /// Generate a synthetic task suite and training data.
    Synth(synth::Args),
    /// Serve an encoder over the stdin/stdout line protocol.
    Serve(serve::Args),
}

/// Outcome of a subcommand that ran to completion.
pub enum Outcome {
    Ok,
    /// Evaluation finished but some datasets failed.
    Partial,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Curate(a) => curate::run(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Synth(a) => synth::run(a),
        Command::Serve(a) => serve::run(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Parses a real number constrained to [0, 1].
fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}
