//! Command implementations behind the `edgebench` binary, plus the file
//! formats they read and write.

pub mod config;
pub mod dataset_io;
pub mod ingest;
pub mod logfile;
pub mod report;

mod commands;

pub use commands::{
    cmd_analyze, cmd_ingest, cmd_recommend, cmd_report, cmd_sweep, parse_queries, sidecar_path,
    AnalyzeSummary, SweepSummary,
};

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: configuration, table, query or flag.
    #[error("{0}")]
    Validation(String),
    /// The environment failed: I/O, sampler, missing data.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}
