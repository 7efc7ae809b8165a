//! Command-line verbs: `run`, `compare`, `gen-scenario`.
//!
//! Exit codes are part of the interface:
//! - 0: success (for `run`, a clean run; for `compare`, both runs done)
//! - 1: unreadable or invalid scenario file (no outputs are written)
//! - 2: the run recorded safety violations (`compare` uses this only for
//!   the gatekeeper run; baseline violations are the expected finding)
//! - 3: planning failure (leader path, initial commitment, or generator)
//!
//! The `GK_LOG_LEVEL` environment variable (`error`, `info`, `debug`)
//! controls log verbosity on stderr.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::report::write_run_outputs;
use crate::scenario::{gen_scenario, load_scenario, save_scenario, Scenario};
use crate::sim::{run, Method, RunMetrics};
use crate::SimError;

/// Formation-flight safety filtering: simulate, compare, generate.
#[derive(Parser)]
#[command(name = "gatekeeper", version, about)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario under one method and write its data files.
    Run {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Safety method to apply to the followers.
        #[arg(long, value_enum, default_value_t = MethodArg::Gatekeeper)]
        method: MethodArg,
        /// Output directory for trajectories.csv, metrics.json, commits.csv.
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario's planner seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run both methods on one scenario and print a comparison table.
    Compare {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Output directory; per-method files go to subdirectories.
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario's planner seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a seeded random scenario file.
    GenScenario {
        /// Generator seed; also becomes the scenario's planner seed.
        #[arg(long)]
        seed: u64,
        /// Zone count; drawn from 10..=24 when omitted.
        #[arg(long)]
        zones: Option<usize>,
        /// Path of the scenario file to write.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    /// Committed trajectories with backup suffixes.
    Gatekeeper,
    /// Per-step control barrier QP.
    CbfQp,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gatekeeper => Method::Gatekeeper,
            MethodArg::CbfQp => Method::CbfQp,
        }
    }
}

fn exit_code(err: &SimError) -> i32 {
    match err {
        SimError::Scenario(_) => 1,
        SimError::LeaderPlanning(_) | SimError::InitialCommit { .. } | SimError::Generation(_) => 3,
        SimError::Core(_) | SimError::Io(_) => 1,
    }
}

fn load_with_seed(path: &Path, seed: Option<u64>) -> Result<Scenario, SimError> {
    let mut sc = load_scenario(path)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    Ok(sc)
}

fn print_summary(m: &RunMetrics) {
    println!(
        "{:<11} violations {:>6}   total deviation {:>12.6}   steps {:>6}   mean {:>8.3} ms   max {:>8.3} ms",
        m.method.label(),
        m.violation_count,
        m.total_deviation(),
        m.step_wall_times.len(),
        m.mean_step_time() * 1e3,
        m.max_step_time() * 1e3,
    );
}

fn cmd_run(scenario: &Path, method: Method, out: &Path, seed: Option<u64>) -> Result<i32, SimError> {
    let sc = load_with_seed(scenario, seed)?;
    let metrics = run(&sc, method)?;
    write_run_outputs(out, &metrics)?;
    print_summary(&metrics);
    Ok(if metrics.violation_count > 0 { 2 } else { 0 })
}

fn cmd_compare(scenario: &Path, out: &Path, seed: Option<u64>) -> Result<i32, SimError> {
    let sc = load_with_seed(scenario, seed)?;
    let gk = run(&sc, Method::Gatekeeper)?;
    write_run_outputs(&out.join(Method::Gatekeeper.label()), &gk)?;
    let qp = run(&sc, Method::CbfQp)?;
    write_run_outputs(&out.join(Method::CbfQp.label()), &qp)?;

    println!(
        "{:<11} {:>10} {:>16} {:>14} {:>14}",
        "method", "violations", "total deviation", "mean step ms", "max step ms"
    );
    for m in [&gk, &qp] {
        println!(
            "{:<11} {:>10} {:>16.6} {:>14.3} {:>14.3}",
            m.method.label(),
            m.violation_count,
            m.total_deviation(),
            m.mean_step_time() * 1e3,
            m.max_step_time() * 1e3,
        );
    }
    println!();
    println!(
        "reference totals from the original benchmark, other hardware, NOT reproduced here: \
         CBF-QP 9.49 s, trajectory optimization 302.65 s, gatekeeper 3.61 s"
    );
    Ok(if gk.violation_count > 0 { 2 } else { 0 })
}

fn cmd_gen(seed: u64, zones: Option<usize>, out: &Path) -> Result<i32, SimError> {
    let g = gen_scenario(seed, zones)?;
    save_scenario(out, &g.scenario, &g.header)?;
    println!(
        "wrote {} ({} zones, goal at {:.2} LU)",
        out.display(),
        g.scenario.zones.len(),
        g.scenario.leader_goal.x
    );
    Ok(0)
}

/// Parses arguments, dispatches, and returns the process exit code.
pub fn run_cli() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, method, out, seed } => cmd_run(scenario, (*method).into(), out, *seed),
        Command::Compare { scenario, out, seed } => cmd_compare(scenario, out, *seed),
        Command::GenScenario { seed, zones, out } => cmd_gen(*seed, *zones, out),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            log::error!("{err}");
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
