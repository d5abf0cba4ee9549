//! Combination, evaluation and trading backtests for probabilistic
//! day-ahead electricity price forecasts on a 99-percentile grid.

pub mod combiner;
pub mod data;
pub mod learner;
pub mod market;
pub mod metrics;

pub use combiner::{equal_weight_average, horizontal_average, qens_combine, rearrange, CombineError, WeightSurface};
pub use data::{
    align, load_expert_panel, load_forecast_series, load_prices, save_forecast_series, save_prices, AlignedDataset,
    CombinedPanel, DataError, Expert, ExpertPanel, ForecastSeries, PriceSeries, ProbGrid, QuantileCurve, HOURS_PER_DAY,
    MEDIAN_INDEX, N_QUANTILES,
};
pub use learner::{run_online, LearnerConfig, LearnerError, OnlineRun};
pub use market::{
    crystal_ball, naive_fixed, run_strategy, worst_case, MarketError, ProfitCheck, RiskConfig, TradeLedger,
};
pub use metrics::{crps_approx, dm_pvalue_matrix, dm_test, quantile_loss, DmResult, LossPanel, MetricsError};
