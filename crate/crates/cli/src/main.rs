use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::LevelFilter;

use mapek::runner::{self, RunError, RunOptions};

#[derive(Parser)]
#[command(name = "mapek", version, about = "Run MAPE-K control loop scenarios against a simulated server farm")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write metrics.csv and decisions.log.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        policies: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario duration in ticks.
        #[arg(long)]
        duration: Option<u64>,
        /// Dispatch concurrent plan steps on separate threads.
        #[arg(long)]
        concurrent_exec: bool,
    },
    /// Check a scenario and policy file without simulating.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        policies: PathBuf,
    },
}

fn log_level() -> LevelFilter {
    match std::env::var("MAPEK_LOG_LEVEL").as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("info") => LevelFilter::Info,
        Ok("trace") => LevelFilter::Trace,
        Ok(other) => {
            eprintln!("warning: MAPEK_LOG_LEVEL `{other}` not one of quiet, info, trace");
            LevelFilter::Warn
        }
        Err(_) => LevelFilter::Warn,
    }
}

fn execute(command: Command) -> Result<(), RunError> {
    match command {
        Command::Run {
            scenario,
            policies,
            out,
            seed,
            duration,
            concurrent_exec,
        } => {
            let opts = RunOptions {
                seed,
                duration,
                concurrent_exec,
            };
            let output = runner::run(&scenario, &policies, &out, &opts)?;
            println!(
                "{} ticks, {} decisions, {} servers at end; wrote {}",
                output.metrics.iter().map(|m| m.t).max().map_or(0, |t| t + 1),
                output.decisions.len(),
                output.final_servers.len(),
                out.display()
            );
        }
        Command::Validate { scenario, policies } => {
            let scenario = runner::load_scenario(&scenario)?;
            let policies = runner::load_policies(&policies)?;
            for w in runner::validate(&scenario, &policies) {
                println!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(log_level()).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
