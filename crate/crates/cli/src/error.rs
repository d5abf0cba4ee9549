use std::path::PathBuf;

use epfens::data::DataError;
use epfens::learner::LearnerError;
use epfens::market::MarketError;
use epfens::metrics::MetricsError;
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("no combined panel for '{name}' at {path}; run `combine` first")]
    MissingPanel { name: String, path: PathBuf },
    #[error("dataset incomplete in {dir}: missing {missing}")]
    MissingData { dir: PathBuf, missing: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl CliError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Learner(_) => "learner",
            CliError::Metrics(_) => "metrics",
            CliError::Market(_) => "market",
            CliError::MissingPanel { .. } => "missing_panel",
            CliError::MissingData { .. } => "missing_data",
            CliError::Io { .. } | CliError::Csv { .. } => "io",
        }
    }

    /// One-line JSON object `{"error": kind, "message": text}`.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}
