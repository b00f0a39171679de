//! Reproducible command-line runs over the `semicomp` estimators: dataset
//! validation, the two proportional-hazards fits, counterfactual restricted
//! mean durations with standard errors, compensation, and simulation studies.
//!
//! Every command is a plain function taking an options struct, so the binary
//! in `main.rs` is only argument parsing.

pub mod commands;
pub mod manifest;
pub mod model;
pub mod schedule;

use std::path::{Path, PathBuf};

/// Days per month used when durations are reported in months.
pub const DAYS_PER_MONTH: f64 = 30.4375;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] semicomp::io::IoError),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(#[from] semicomp::data::ValidationErrors),
    #[error("{process} fit: {source}")]
    Fit {
        process: semicomp::data::Process,
        #[source]
        source: semicomp::cox::CoxError,
    },
    #[error("subject {subject}: {detail}")]
    Prediction { subject: String, detail: String },
    #[error("model: {0}")]
    Model(String),
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("{path}, line {line}: {detail}")]
    Table { path: PathBuf, line: u64, detail: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Simulation(#[from] semicomp::simulation::SimulationError),
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    let bytes = read_file(path)?;
    String::from_utf8(bytes).map_err(|e| CliError::File {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| CliError::File {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Shortest decimal string that parses back to the same `f64`.
pub fn decimal(v: f64) -> String {
    v.to_string()
}

pub fn parse_decimal(s: &str) -> Result<f64, String> {
    s.trim().parse::<f64>().map_err(|_| format!("`{s}` is not a number"))
}
