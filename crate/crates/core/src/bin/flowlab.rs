use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use flowlab::harness::{self, ExperimentConfig, ExperimentKind, EXIT_CONFIG};

/// Runs one experiment from a TOML configuration.
#[derive(Debug, Parser)]
#[command(name = "flowlab", version)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the `experiment` key of the configuration.
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Cloud size N.
    #[arg(long)]
    resolution: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("flowlab: {e}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}

fn run(args: &Args) -> flowlab::Result<i32> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(name) = &args.experiment {
        cfg.experiment = Some(ExperimentKind::parse(name)?);
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.resolution {
        cfg.resolution.n = n;
    }
    let outcome = harness::run(&cfg, &args.out)?;
    println!("{}: {}", outcome.experiment.name(), outcome.verdict.label());
    println!("report: {}", outcome.verdict_path.display());
    Ok(outcome.exit_code())
}
