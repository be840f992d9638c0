use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use evsec::cli::report::{matrix_table, verdict_report};
use evsec::cli::runner::{load_scenario, run_config, verify_trace, write_trace, CliError};
use evsec::cli::suite::{diff_against, run_matrix, to_tsv, BUILTINS, EXPECTED_MATRIX};
use evsec::verdict::Grade;

#[derive(Parser)]
#[command(
    name = "evsec",
    version,
    about = "Simulate EV-charging scenarios and grade their security requirements"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or built-in scenario and print its verdicts.
    Run {
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Run the full security matrix and compare it with the shipped expectation.
    Matrix {
        /// Write the computed matrix as TSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-grade a recorded JSONL trace.
    VerifyTrace { trace: PathBuf },
    /// List the built-in scenarios.
    ListScenarios,
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Run {
            scenario,
            seed,
            trace_out,
        } => {
            let config = load_scenario(&scenario)?;
            let outcome = run_config(&config, seed)?;
            if let Some(path) = trace_out {
                write_trace(&outcome.trace, &path)?;
            }
            print!("{}", verdict_report(&outcome.trace, &outcome.verdicts));
            Ok(outcome.exit_code() as u8)
        }
        Command::Matrix { out } => {
            let rows = run_matrix()?;
            print!("{}", matrix_table(&rows));
            if let Some(path) = out {
                std::fs::write(&path, to_tsv(&rows)).map_err(|source| CliError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
            let diff = diff_against(&rows, EXPECTED_MATRIX)
                .unwrap_or_else(|e| vec![format!("expected matrix unreadable: {e}")]);
            if !diff.is_empty() {
                eprintln!("{} cells differ from the expected matrix:", diff.len());
                for d in &diff {
                    eprintln!("  {d}");
                }
                return Ok(1);
            }
            let violated = rows
                .iter()
                .any(|r| r.grades.values().any(|g| *g == Grade::Violated));
            Ok(if violated { 2 } else { 0 })
        }
        Command::VerifyTrace { trace } => {
            let outcome = verify_trace(&trace)?;
            print!("{}", verdict_report(&outcome.trace, &outcome.verdicts));
            Ok(outcome.exit_code() as u8)
        }
        Command::ListScenarios => {
            for (name, text) in BUILTINS {
                let description = evsec::cli::config::ScenarioConfig::from_toml(text)
                    .map(|c| c.description)
                    .unwrap_or_else(|e| format!("(invalid: {e})"));
                println!("{name:<34} {description}");
            }
            Ok(0)
        }
    }
}
