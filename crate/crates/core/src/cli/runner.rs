//! Loading, running and re-checking scenarios.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use thiserror::Error;

use crate::cli::config::{ConfigError, ScenarioConfig};
use crate::cli::suite;
use crate::flows::{self, RunError};
use crate::trace::{Trace, TraceError};
use crate::verdict::{any_violated, check_all, Verdict, VerdictError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Verdict(#[from] VerdictError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub struct RunOutcome {
    pub trace: Trace,
    pub verdicts: Vec<Verdict>,
}

impl RunOutcome {
    /// 0 when nothing is Violated, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if any_violated(&self.verdicts) {
            2
        } else {
            0
        }
    }
}

/// A path to a scenario file, or the name of a built-in scenario.
pub fn load_scenario(arg: &str) -> Result<ScenarioConfig, CliError> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(config) = suite::builtin(arg) {
            return Ok(config?);
        }
    }
    Ok(ScenarioConfig::load(path)?)
}

/// Runs `config`, optionally under a different seed, and grades the trace.
pub fn run_config(config: &ScenarioConfig, seed: Option<u64>) -> Result<RunOutcome, CliError> {
    let mut config = config.clone();
    if let Some(s) = seed {
        config.seed = s;
    }
    let trace = flows::run(&config)?;
    let verdicts = check_all(&trace)?;
    Ok(RunOutcome { trace, verdicts })
}

pub fn write_trace(trace: &Trace, path: &Path) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    trace.write_jsonl(BufWriter::new(file))?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Trace, CliError> {
    let file = File::open(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(Trace::read_jsonl(BufReader::new(file))?)
}

/// Grades a stored trace without re-simulating.
pub fn verify_trace(path: &Path) -> Result<RunOutcome, CliError> {
    let trace = read_trace(path)?;
    let verdicts = check_all(&trace)?;
    Ok(RunOutcome { trace, verdicts })
}
