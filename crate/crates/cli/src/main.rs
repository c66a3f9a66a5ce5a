//! `aggloc`: membership inference experiments on aggregate location data.

use std::path::PathBuf;
use std::process::ExitCode;

use aggloc_core::harness::{self, Command, RunOptions};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aggloc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Generate a synthetic population and write it as dataset JSON.
    Synth(Flags),
    /// Discretize an event CSV into dataset JSON.
    Ingest(Flags),
    /// Aggregate one group over a window.
    Aggregate(Flags),
    /// Attack the configured victims on raw aggregates.
    Attack(Flags),
    /// Apply one defense to one group aggregate.
    Defend(Flags),
    /// Compare a raw and a defended aggregate CSV.
    Utility(Flags),
    /// Run the defense grid against every victim and measure utility.
    Tradeoff(Flags),
    /// Mobility features, loading heatmap and susceptibility analysis.
    Profile(Flags),
    /// Utility of a random-guess release.
    Baseline(Flags),
}

#[derive(Args)]
struct Flags {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Replaces the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Sub {
    fn split(self) -> (Command, Flags) {
        match self {
            Sub::Synth(f) => (Command::Synth, f),
            Sub::Ingest(f) => (Command::Ingest, f),
            Sub::Aggregate(f) => (Command::Aggregate, f),
            Sub::Attack(f) => (Command::Attack, f),
            Sub::Defend(f) => (Command::Defend, f),
            Sub::Utility(f) => (Command::Utility, f),
            Sub::Tradeoff(f) => (Command::Tradeoff, f),
            Sub::Profile(f) => (Command::Profile, f),
            Sub::Baseline(f) => (Command::Baseline, f),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (command, flags) = Cli::parse().command.split();
    let options = RunOptions {
        out_dir: flags.out,
        jobs: flags.jobs,
        seed: flags.seed,
    };
    match harness::run(command, &flags.config, &options) {
        Ok(manifest) => {
            log::info!("wrote {}", manifest.outputs.join(", "));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
