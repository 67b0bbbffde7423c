//! `pathint`: experiment harness for the sampling-based optimal
//! control library. Exit codes: 0 success, 1 verification failure,
//! 2 usage error, 3 IO error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pathint_cli::config::parse_config;
use pathint_cli::experiment::{run_experiment, summary_csv, write_outputs, RunError};
use pathint_cli::verify;

#[derive(Parser)]
#[command(name = "pathint", version, about = "Sampling-based stochastic optimal control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep described by a config file.
    Run {
        /// Flat key=value experiment description.
        #[arg(long)]
        config: PathBuf,
        /// Directory for summary.csv, timing.csv and per-run logs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for grid cells.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Run a library self-check battery.
    Verify {
        #[arg(long, value_enum)]
        suite: verify::Suite,
    },
    /// Generate an obstacle forest and write it as JSON.
    Forest {
        /// Mean obstacle spacing in meters.
        #[arg(long)]
        spacing: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(RunError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(RunError::Io(e)) => {
            eprintln!("io error: {e}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, RunError> {
    match cli.command {
        Command::Run { config, out, workers } => {
            if workers == 0 {
                return Err(RunError::Usage("--workers must be at least 1".into()));
            }
            let text = std::fs::read_to_string(&config)?;
            let mut cfg = parse_config(&text).map_err(|e| RunError::Usage(e.to_string()))?;
            if out.is_some() {
                cfg.out_dir = out;
            }
            let want_logs = cfg.out_dir.is_some();
            let (summaries, logs) = run_experiment(&cfg, workers, want_logs)?;
            print!("{}", summary_csv(&summaries));
            if let Some(dir) = &cfg.out_dir {
                write_outputs(dir, &summaries, &logs)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { suite } => {
            let report = verify::run_suite(suite);
            verify::print_report(&report);
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Forest { spacing, seed, out } => {
            let forest = pathint::envs::forest::generate_forest(
                spacing,
                pathint::envs::forest::Bounds::square(10.0),
                0.5,
                (-9.0, -9.0),
                (9.0, 9.0),
                seed,
            )
            .map_err(|e| RunError::Usage(e.to_string()))?;
            std::fs::write(&out, forest.to_json())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
