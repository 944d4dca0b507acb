//! Library side of the `dtctrl` binary: configuration, commands and report
//! rendering, kept separate from argument parsing so they can be tested
//! directly.

pub mod commands;
pub mod config;
pub mod report;

use std::path::Path;

use thiserror::Error;

pub use commands::{analyze, list_systems, optimal, oracle, CostSpec, Outcome};
pub use config::{OracleParams, OutputFormat, RunConfig, SystemSource};
pub use report::{Report, Section};

/// Certified positive answer (controllable, locally optimal, checks pass).
pub const EXIT_OK: i32 = 0;
/// Certified negative answer (not controllable, necessary condition violated).
pub const EXIT_NEGATIVE: i32 = 10;
pub const EXIT_INCONCLUSIVE: i32 = 20;
/// The oracle disagrees with the analytic result.
pub const EXIT_DISCREPANCY: i32 = 30;
pub const EXIT_ERROR: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] dtctrl_core::Error),
    #[error("{path}: {source}")]
    File {
        path: String,
        source: dtctrl_core::exprdsl::ParseError,
    },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn file(path: &Path, source: dtctrl_core::exprdsl::ParseError) -> Self {
        CliError::File {
            path: path.display().to_string(),
            source,
        }
    }
}

pub fn render(report: &Report, format: OutputFormat) -> String {
    match format {
        OutputFormat::Text => report.render_text(),
        OutputFormat::Structured => report.render_structured(),
    }
}
