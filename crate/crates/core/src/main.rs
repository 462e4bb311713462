use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wsched::harness::{self, RunOptions, Task};

#[derive(Parser)]
#[command(name = "wsched", version, about = "Queue-length-based scheduling simulator and stability diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every seed, write traces and stability reports.
    Simulate(RunArgs),
    /// Probe the sufficient stability conditions on the policy's weight map.
    CheckConditions(RunArgs),
    /// Weight-jump and stuck-weight statistics of simulated traces.
    Necessity(RunArgs),
    /// Build the potential and estimate its drift at probe points.
    Lyapunov(RunArgs),
    /// All of the above.
    Report(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Concurrent seed jobs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Run this single seed instead of the scenario's list.
    #[arg(long)]
    seed_override: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, args) = match cli.command {
        Command::Simulate(a) => (Task::Simulate, a),
        Command::CheckConditions(a) => (Task::CheckConditions, a),
        Command::Necessity(a) => (Task::Necessity, a),
        Command::Lyapunov(a) => (Task::Lyapunov, a),
        Command::Report(a) => (Task::Report, a),
    };
    let opts = RunOptions { out: args.out, jobs: args.jobs.max(1), seed_override: args.seed_override };
    match harness::run(task, &args.scenario, &opts) {
        Ok(summary) => {
            for r in &summary.runs {
                match r.verdict {
                    Some(v) => eprintln!("seed {}: {v}", r.seed),
                    None => eprintln!("seed {}: done", r.seed),
                }
            }
            eprintln!("summary written to {}", opts.out.join("summary.json").display());
            ExitCode::from(harness::EXIT_OK as u8)
        }
        Err(e) => {
            eprintln!("wsched: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
