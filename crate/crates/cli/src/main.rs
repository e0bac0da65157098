//! `gsg`: batch front-end for Gaussian semigroup experiments.
//!
//! Exit codes: 0 success, 1 tolerance or statistical failure, 2 configuration
//! error, 3 numerical failure.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::report::{write_atomic, Report, Versions};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "GSG_OUT_DIR";

#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<gauss_semigroup::Error> for Failure {
    fn from(e: gauss_semigroup::Error) -> Self {
        Failure::Numerical(e.into())
    }
}

#[derive(Parser)]
#[command(name = "gsg", version, about = "Gaussian semigroup experiments from JSON configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (JSON), or a report emitted by an earlier run.
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $GSG_OUT_DIR, then the config, then `.`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the parameter flow and check the Fourier residual.
    Evolve(RunArgs),
    /// Evaluate the C = 0 or D = 0 closed form.
    ClosedForm(RunArgs),
    /// Run the property suite (semigroup, generator recovery, moments).
    Verify(RunArgs),
    /// Sample discretized paths.
    Sample(RunArgs),
    /// Estimate a cylinder-set mass.
    Cylinder(RunArgs),
    /// Feynman-Kac estimate for a potential.
    Fk(RunArgs),
    /// Recover the generators from the flow.
    Recover(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args, run): (&str, RunArgs, fn(&config::ExperimentConfig) -> Result<commands::Outcome, Failure>) =
        match cli.command {
            Command::Evolve(a) => ("evolve", a, commands::evolve),
            Command::ClosedForm(a) => ("closed-form", a, commands::closed_form),
            Command::Verify(a) => ("verify", a, commands::verify),
            Command::Sample(a) => ("sample", a, commands::sample),
            Command::Cylinder(a) => ("cylinder", a, commands::cylinder),
            Command::Fk(a) => ("fk", a, commands::fk),
            Command::Recover(a) => ("recover", a, commands::recover),
        };
    match execute(name, &args, run) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn execute(
    name: &str,
    args: &RunArgs,
    run: fn(&config::ExperimentConfig) -> Result<commands::Outcome, Failure>,
) -> Result<bool, Failure> {
    let mut cfg = config::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let start = Instant::now();
    let outcome = run(&cfg)?;
    let mut files = Vec::new();
    for (file, bytes) in &outcome.files {
        write_atomic(&out_dir, file, bytes).map_err(Failure::Numerical)?;
        files.push(file.clone());
    }
    let report = Report {
        command: name.to_string(),
        config_hash: cfg.hash(),
        config: cfg.canonical(),
        passed: outcome.passed,
        results: outcome.results,
        files,
        versions: Versions::current(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    let mut text = serde_json::to_vec_pretty(&report).expect("report serializes");
    text.push(b'\n');
    let path = write_atomic(&out_dir, &format!("{name}.report.json"), &text).map_err(Failure::Numerical)?;
    println!(
        "{name}: {} (report {})",
        if outcome.passed { "passed" } else { "FAILED" },
        path.display()
    );
    Ok(outcome.passed)
}
