//! Configuration, environment data and report emission.

mod config;
mod env;
mod report;

pub use config::{parse_config, to_json};
pub use env::{load_env_csv, parse_env_csv, synth_env, EnvCsvRow, SynthEnv};
pub use report::{
    emit_outputs, metrics_doc, parse_run_csv, read_metrics, write_run_csv, AttackStatsDoc, MetricsDoc, RunCsvRow, TimingDoc,
    RUN_CSV_HEADER,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("non-monotonic time at data row {row}")]
    NonMonotonicTime { row: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

impl IoError {
    /// Stable name printed by the command-line tool.
    pub fn name(&self) -> &'static str {
        match self {
            IoError::Parse { .. } => "ParseError",
            IoError::Validation(_) => "ValidationError",
            IoError::Schema(_) => "SchemaError",
            IoError::NonMonotonicTime { .. } => "NonMonotonicTime",
            IoError::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for IoError {
    fn from(e: std::io::Error) -> Self {
        IoError::Io(e.to_string())
    }
}
