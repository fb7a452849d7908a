//! Experiment orchestration behind the command-line tool: config parsing,
//! step-size search, multi-seed comparison runs, CSV and SVG output, and the
//! bound-verification suite.

mod config;
mod experiment;
mod output;
mod plot;
mod verify;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::problems::ProblemError;
use crate::solvers::{Method, SolveError};

pub use config::{parse_config, parse_config_str, ExperimentConfig, Regime, CONFIG_VERSION};
pub use experiment::{
    default_gamma_grid, grid_search, run_experiment, run_regime, ComparisonTable, GridCandidate,
    GridSearch, MethodSeries,
};
pub use output::{read_table, write_record_csv, write_regime_outputs, RunMetadata};
pub use plot::emit_plot;
pub use verify::{verify_cli, verify_regime, CheckRow, VerifyReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at key `{key}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        key: String,
        line: Option<usize>,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("every step-size candidate diverged for {method}; try smaller grid values")]
    AllDiverged { method: Method },
    #[error("plot error: {0}")]
    Plot(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl HarnessError {
    pub(crate) fn config(key: &str, line: Option<usize>, message: String) -> Self {
        HarnessError::Config {
            key: key.to_string(),
            line,
            message,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, message: impl Into<String>) -> Self {
        HarnessError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 for usage and config problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => 2,
            HarnessError::Analysis(AnalysisError::PresetMismatch(_) | AnalysisError::Hypothesis(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
