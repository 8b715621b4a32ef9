//! `dds`: sample, score, ingest and analyze network design spaces.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "dds", version, about = "Design space sampling and population analysis")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Master seed for sampling, surrogate noise and resampling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Design space definition (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a population of networks inside a flop window.
    Sample(commands::SampleArgs),
    /// Flops, parameters and activations of specs or population records.
    Complexity(commands::ComplexityArgs),
    /// Fit the quantized linear width rule to every model of a population.
    Fit(commands::FitArgs),
    /// EDFs, bootstrap bands, trend fits and search efficiency.
    Analyze(commands::AnalyzeArgs),
    /// Lowest-error models of a population.
    Best(commands::BestArgs),
    /// Approximate design space sizes.
    Size(commands::SizeArgs),
    /// Write one spec JSON per model for external training.
    Export(commands::ExportArgs),
    /// Fill a population with surrogate errors.
    Surrogate(commands::SurrogateArgs),
    /// Join externally measured errors into a population.
    Ingest(commands::IngestArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match cli.command {
        Command::Sample(a) => commands::sample(g, a),
        Command::Complexity(a) => commands::complexity(g, a),
        Command::Fit(a) => commands::fit(g, a),
        Command::Analyze(a) => commands::analyze(g, a),
        Command::Best(a) => commands::best(g, a),
        Command::Size(a) => commands::size(g, a),
        Command::Export(a) => commands::export(g, a),
        Command::Surrogate(a) => commands::surrogate(g, a),
        Command::Ingest(a) => commands::ingest(g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
