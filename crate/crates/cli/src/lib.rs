//! Command-line pipeline: combine expert forecasts into ensembles, score
//! them, and backtest the battery bidding strategy.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;
pub mod synthetic;

pub use commands::{combine, dm_matrix, evaluate, fetch_data, report, trade, FetchOptions};
pub use config::{Averaging, ConfigError, EnsembleSpec, RunConfig};
pub use error::CliError;
