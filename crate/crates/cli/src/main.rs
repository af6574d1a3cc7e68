//! `tcp-meanfield`: run particle simulations, mean-field solves and their
//! comparisons from an experiment document.
//!
//! Exit status is 0 on success, 2 when the document or the flags are
//! invalid and 1 when a run fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use tcp_meanfield::harness::{emit_plotdata, execute, parse_spec_with, Mode, Overrides};
use tcp_meanfield::{Error, Result, Violation};

#[derive(Parser)]
#[command(name = "tcp-meanfield", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the N-flow system for every population size and seed.
    Simulate(RunArgs),
    /// Solve the mean-field limit.
    Solve(RunArgs),
    /// Solve the limit and compare it with particle runs.
    Compare(RunArgs),
    /// Coupled runs under RED and Gentle RED for each ramp width.
    GentleSweep(RunArgs),
    /// Stationary point of the limit and its residuals.
    FixedPoint(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment document (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory. Without it and without `output` in the document,
    /// only the summary is printed.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Population sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Particle time step in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Mean-field window grid spacing.
    #[arg(long)]
    dw: Option<f64>,
    /// Mean-field grid intervals per round trip.
    #[arg(long)]
    substeps: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn split(self) -> (Mode, RunArgs) {
        match self {
            Command::Simulate(a) => (Mode::Simulate, a),
            Command::Solve(a) => (Mode::Solve, a),
            Command::Compare(a) => (Mode::Compare, a),
            Command::GentleSweep(a) => (Mode::GentleSweep, a),
            Command::FixedPoint(a) => (Mode::FixedPoint, a),
        }
    }
}

/// Create `dir` and make sure a file can be written there.
fn check_writable(dir: &Path) -> Result<()> {
    let probe = dir.join(".write-probe");
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(&probe, b""))
        .and_then(|_| fs::remove_file(&probe))
        .map_err(|e| {
            Error::Config(vec![Violation::new(
                "output",
                format!("{} is not writable: {e}", dir.display()),
            )])
        })
}

fn run(mode: Mode, args: RunArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", args.config.display())))?;
    let over = Overrides {
        mode: Some(mode),
        flows: args.n,
        seeds: args.seed,
        dt: args.dt,
        dw: args.dw,
        substeps: args.substeps,
        output: args.out,
        threads: args.threads,
    };
    let spec = parse_spec_with(&text, &over)?;
    for d in &spec.defaults {
        info!("default: {d}");
    }
    if let Some(dir) = &spec.output {
        check_writable(dir)?;
    }
    let bundle = execute(&spec)?;
    match &spec.output {
        Some(dir) => {
            for path in emit_plotdata(&bundle, dir)? {
                println!("{}", path.display());
            }
        }
        None => {
            let summary = serde_json::to_string_pretty(&bundle.summary)
                .map_err(|e| Error::Usage(e.to_string()))?;
            println!("{summary}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (mode, args) = Cli::parse().command.split();
    match run(mode, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
