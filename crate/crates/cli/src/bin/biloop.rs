use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use biloop_cli::{format_table, parse_values, run_experiment, sweep, sweep_table, verify, Axis, ExperimentConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "biloop", version, about = "Bilevel optimization experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and print its summary row.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one experiment per axis value and print a summary table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// N, Q or scheme.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; may be empty.
        #[arg(long, allow_hyphen_values = true, default_value = "")]
        values: String,
    },
    /// Run the acceptance suite.
    Verify {
        /// Criterion id or a substring of its name.
        #[arg(long)]
        filter: Option<String>,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse::<ExperimentConfig>()
        .with_context(|| format!("parsing {}", path.display()))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config } => {
            let config = load(&config)?;
            let (_, row) = run_experiment(&config)?;
            print!("{}", format_table(&[(row.label.clone(), Ok(row))]));
            Ok(true)
        }
        Command::Sweep { config, axis, values } => {
            let config = load(&config)?;
            let axis: Axis = axis.parse()?;
            let values = parse_values(axis, &config, &values)?;
            let rows = sweep(&config, axis, &values)?;
            print!("{}", sweep_table(&rows));
            Ok(rows.iter().all(|r| r.result.is_ok()))
        }
        Command::Verify { filter } => {
            let report = verify(filter.as_deref());
            print!("{}", report.text());
            Ok(report.all_passed())
        }
    }
}
