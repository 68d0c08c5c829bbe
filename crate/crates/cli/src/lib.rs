//! Experiment runner: decodes datasets with any strategy and backend,
//! persists captions, traces and manifests, and evaluates and compares runs.
//!
//! Exit codes: 0 success, 1 usage, 2 config, 3 backend, 4 data.

pub mod args;
pub mod backends;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod runs;

use std::ffi::OsString;

use clap::Parser;
use sumgd_core::analysis::AnalysisError;
use sumgd_core::backend::BackendError;
use sumgd_core::decoding::{ConfigError, DecodeError};
use sumgd_core::metrics::MetricsError;
use sumgd_core::summarizer::SummarizerError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("data: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<SummarizerError> for CliError {
    fn from(e: SummarizerError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Config(e) => e.into(),
            DecodeError::MissingContrastContext(_) | DecodeError::MissingSummarizer => CliError::Config(e.to_string()),
            DecodeError::Backend(_) | DecodeError::Distribution(_) | DecodeError::Summarizer(_) => {
                CliError::Backend(e.to_string())
            }
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Decode(d) => d.into(),
            AnalysisError::InvalidWindow => CliError::Usage(e.to_string()),
            AnalysisError::Parse(_) => CliError::Data(e.to_string()),
            AnalysisError::ImageUnsupported | AnalysisError::Backend(_) | AnalysisError::Distribution(_) => {
                CliError::Backend(e.to_string())
            }
        }
    }
}

/// Reads a file, mapping failures to a data error naming the path.
pub(crate) fn read(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub(crate) fn write(path: &std::path::Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Parses arguments and runs the command, writing results to stdout.
/// Returns the process exit code.
pub fn run<I, S>(argv: I, stdout: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
