use clap::{Args, Parser, Subcommand};
use fracspend::harness::{self, Exit, Scenario};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "fracspend", version, about = "Fractional spending simulator with secret quorums")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every trial of a scenario and check safety and liveness.
    Run(Common),
    /// Measure how often VRF self-selection picks fewer than k validators.
    Stats(Common),
    /// Sweep n and check message complexity ratios.
    Complexity(Common),
}

#[derive(Args, Debug)]
struct Common {
    scenario: PathBuf,
    /// Base seed; replaces the scenario's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trials; replaces the scenario's `trials`.
    #[arg(long)]
    trials: Option<usize>,
    /// Report destination; the report goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scenario override `dotted.key=value`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads; 0 uses every core, 1 runs on the main thread.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn load(c: &Common) -> Result<Scenario, String> {
    let mut overrides = c.overrides.clone();
    if let Some(s) = c.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(t) = c.trials {
        overrides.push(format!("trials={t}"));
    }
    harness::load_scenario(&c.scenario, &overrides).map_err(|e| e.to_string())
}

fn emit(report: &str, out: Option<&Path>) -> Result<(), String> {
    match out {
        Some(p) => std::fs::write(p, report).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => {
            print!("{report}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<Exit, (Exit, String)> {
    let parse = |e: String| (Exit::Parse, e);
    match cli.command {
        Command::Run(c) => {
            let scn = load(&c).map_err(parse)?;
            let opts = harness::sim_options_from_env().map_err(parse)?;
            let report = harness::run_scenario(&scn, c.jobs, opts);
            let a = &report.aggregate;
            eprintln!(
                "{}: {} trials, policy {}, safety {:.3}, liveness {:.3}",
                report.scenario, report.trials, report.policy, a.safety_pass_rate, a.liveness_ok_rate
            );
            for (kind, m) in &a.op_messages_mean {
                eprintln!("  mean {kind} messages {m:.2}");
            }
            emit(&report.to_toml(), c.out.as_deref()).map_err(parse)?;
            Ok(report.exit())
        }
        Command::Stats(c) => {
            let scn = load(&c).map_err(parse)?;
            let report = harness::selection_stats(&scn, c.jobs);
            eprint!("{}", report.table());
            emit(&report.to_toml(), c.out.as_deref()).map_err(parse)?;
            Ok(if report.pass { Exit::Ok } else { Exit::Safety })
        }
        Command::Complexity(c) => {
            let scn = load(&c).map_err(parse)?;
            let opts = harness::sim_options_from_env().map_err(parse)?;
            let report = harness::complexity_sweep(&scn, c.jobs, opts).map_err(parse)?;
            eprint!("{}", report.table());
            emit(&report.to_toml(), c.out.as_deref()).map_err(parse)?;
            Ok(if report.pass { Exit::Ok } else { Exit::Safety })
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(exit) => ExitCode::from(exit.code() as u8),
        Err((exit, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(exit.code() as u8)
        }
    }
}
