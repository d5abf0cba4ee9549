//! Online CRPS learning: BOA per (hour, quantile), penalized smoothing of
//! the weight curves and online choice of the smoothing parameter.

mod boa;
mod lambda;
mod online;
mod smoother;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combiner::CombineError;
use crate::data::DataError;

pub use boa::{pinball_subgradient, BoaState};
pub use lambda::{default_lambda_grid, select_lambda, LambdaTracker};
pub use online::{
    run_online, write_lambda_history, write_weight_history, LambdaHistory, OnlineLearner, OnlineRun, WeightHistory,
};
pub use smoother::{second_difference, smooth_weights, SmoothedWeights, SmootherBasis, SmoothingOperator};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid learner configuration: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("weight overflow at hour {hour}, quantile {quantile}")]
    Overflow { hour: usize, quantile: usize },
    #[error("smoothing system is singular for lambda {lambda}")]
    SingularSmoother { lambda: f64 },
    #[error("need at least 2 experts, got {0}")]
    TooFewExperts(usize),
    #[error("expert panel and prices are not aligned: {0}")]
    Misaligned(String),
    #[error(transparent)]
    Combine(#[from] CombineError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub lambda_grid: Vec<f64>,
    /// Number of cubic B-spline basis functions across the quantile grid.
    pub n_basis: usize,
    pub eta_max: f64,
    /// Share one set of weights across all 24 hours.
    pub pool_hours: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            lambda_grid: default_lambda_grid(),
            n_basis: 25,
            eta_max: 1e6,
            pool_hours: false,
        }
    }
}
