//! Day-ahead battery arbitrage with quantile limit orders.
//!
//! The battery holds 0, 1 or 2 MWh and starts at 1. Every order moves one
//! MWh. Buying at price `p` costs `p / 0.9` and selling earns `0.9 · p`.
//! Hours are delivery periods 1..=24 in every public type.

use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{format_date, ForecastSeries, PriceSeries, ProbGrid, QuantileCurve, HOURS_PER_DAY};

pub const EFFICIENCY: f64 = 0.9;
pub const CAPACITY: u8 = 2;
pub const INITIAL_LEVEL: u8 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("risk appetite {0} does not map onto the percentile grid")]
    InvalidAlpha(f64),
    #[error("invalid fixed hours: buy {buy}, sell {sell} (need 1 <= buy < sell <= 24)")]
    InvalidHours { buy: usize, sell: usize },
    #[error("battery level {0} outside 0..=2")]
    InvalidLevel(u8),
    #[error("plan made for battery level {planned} executed at level {actual}")]
    Inconsistent { planned: u8, actual: u8 },
    #[error("battery level would leave 0..=2 at hour {hour}")]
    LevelViolation { hour: usize },
    #[error("need {HOURS_PER_DAY} hourly curves, got {0}")]
    Shape(usize),
    #[error("forecasts and prices are not aligned: {0}")]
    Misaligned(String),
}

#[inline]
pub fn buy_cost(price: f64) -> f64 {
    price / EFFICIENCY
}

#[inline]
pub fn sell_revenue(price: f64) -> f64 {
    EFFICIENCY * price
}

/// Cash of buying at `buy` and selling at `sell`. Every spread in this
/// module goes through this expression.
#[inline]
pub fn spread(buy: f64, sell: f64) -> f64 {
    -buy_cost(buy) + sell_revenue(sell)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatteryState {
    level: u8,
}

impl BatteryState {
    pub fn new(level: u8) -> Result<Self, MarketError> {
        if level > CAPACITY {
            return Err(MarketError::InvalidLevel(level));
        }
        Ok(Self { level })
    }

    pub fn initial() -> Self {
        Self { level: INITIAL_LEVEL }
    }

    pub fn level(self) -> u8 {
        self.level
    }
}

/// Which check decides whether the limit orders are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfitCheck {
    /// Spread at the limit prices must be positive.
    #[default]
    WorstCase,
    /// Spread at the median forecasts must be positive.
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskConfig {
    alpha: f64,
    low: usize,
    high: usize,
    check: ProfitCheck,
}

impl RiskConfig {
    /// `q = (1 - alpha) / 2`; both `q` and `1 - q` must be grid probabilities.
    pub fn new(alpha: f64) -> Result<Self, MarketError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(MarketError::InvalidAlpha(alpha));
        }
        let q = (1.0 - alpha) / 2.0;
        let low = ProbGrid::index_of(q).ok_or(MarketError::InvalidAlpha(alpha))?;
        let high = ProbGrid::index_of(1.0 - q).ok_or(MarketError::InvalidAlpha(alpha))?;
        Ok(Self {
            alpha,
            low,
            high,
            check: ProfitCheck::WorstCase,
        })
    }

    pub fn with_check(mut self, check: ProfitCheck) -> Self {
        self.check = check;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn q(&self) -> f64 {
        (1.0 - self.alpha) / 2.0
    }

    /// Grid indices of `q` and `1 - q`.
    pub fn indices(&self) -> (usize, usize) {
        (self.low, self.high)
    }

    pub fn check(&self) -> ProfitCheck {
        self.check
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForcedKind {
    None,
    Buy,
    Sell,
}

impl ForcedKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ForcedKind::None => "none",
            ForcedKind::Buy => "buy",
            ForcedKind::Sell => "sell",
        }
    }

    fn for_level(level: u8) -> Self {
        match level {
            0 => ForcedKind::Buy,
            2 => ForcedKind::Sell,
            _ => ForcedKind::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayPlan {
    pub h1: usize,
    pub h2: usize,
    pub h_star: Option<usize>,
    pub forced_kind: ForcedKind,
    pub buy_limit: f64,
    pub sell_limit: f64,
    pub trade_flag: bool,
    /// Planned cash at the median forecasts, forced order included.
    pub objective: f64,
    pub battery_start: u8,
}

/// Planned cash of the tuple `(h1, h2, h*)` at prices `m` (0-based hours).
fn tuple_value(m: &[f64; HOURS_PER_DAY], kind: ForcedKind, h1: usize, h2: usize, hs: usize) -> f64 {
    let base = spread(m[h1], m[h2]);
    match kind {
        ForcedKind::None => base,
        ForcedKind::Buy => base - buy_cost(m[hs]),
        ForcedKind::Sell => base + sell_revenue(m[hs]),
    }
}

fn feasible(kind: ForcedKind, h1: usize, h2: usize, hs: usize) -> bool {
    match kind {
        ForcedKind::None => true,
        ForcedKind::Buy => hs < h2 && hs != h1,
        ForcedKind::Sell => hs < h1,
    }
}

/// Chooses the day's hours from the medians and sets the limit orders from
/// the quantile curves.
///
/// The search is exhaustive; among equal objectives the earliest
/// `(h1, h2, h*)` in lexicographic order wins.
pub fn plan_day(
    medians: &[f64; HOURS_PER_DAY],
    curves: &[QuantileCurve],
    battery: BatteryState,
    risk: &RiskConfig,
) -> Result<DayPlan, MarketError> {
    if curves.len() != HOURS_PER_DAY {
        return Err(MarketError::Shape(curves.len()));
    }
    let kind = ForcedKind::for_level(battery.level);
    let star_hours = if kind == ForcedKind::None {
        0..1
    } else {
        0..HOURS_PER_DAY
    };
    let mut best: Option<(f64, usize, usize, usize)> = None;
    for h1 in 0..HOURS_PER_DAY {
        for h2 in h1 + 1..HOURS_PER_DAY {
            for hs in star_hours.clone() {
                if !feasible(kind, h1, h2, hs) {
                    continue;
                }
                let v = tuple_value(medians, kind, h1, h2, hs);
                if best.is_none_or(|(b, ..)| v > b) {
                    best = Some((v, h1, h2, hs));
                }
            }
        }
    }
    let (objective, h1, h2, hs) = best.expect("every battery level has a feasible tuple");
    let (low, high) = risk.indices();
    let buy_limit = curves[h1].at(high);
    let sell_limit = curves[h2].at(low);
    let check = match risk.check() {
        ProfitCheck::WorstCase => spread(buy_limit, sell_limit),
        ProfitCheck::Median => spread(medians[h1], medians[h2]),
    };
    Ok(DayPlan {
        h1: h1 + 1,
        h2: h2 + 1,
        h_star: (kind != ForcedKind::None).then_some(hs + 1),
        forced_kind: kind,
        buy_limit,
        sell_limit,
        trade_flag: check > 0.0,
        objective,
        battery_start: battery.level,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayOutcome {
    pub cash: f64,
    pub trades: usize,
    pub buy_exec: bool,
    pub sell_exec: bool,
    pub forced_exec: bool,
    pub battery_end: BatteryState,
}

/// Executes a plan against realized prices, hour by hour.
///
/// The forced order always fills. With `trade_flag` set, the buy fills when
/// the price is at or below its limit and the sell when the price is at or
/// above its limit.
pub fn execute_day(
    plan: &DayPlan,
    actual: &[f64; HOURS_PER_DAY],
    battery: BatteryState,
) -> Result<DayOutcome, MarketError> {
    if plan.battery_start != battery.level {
        return Err(MarketError::Inconsistent {
            planned: plan.battery_start,
            actual: battery.level,
        });
    }
    let mut level = i32::from(battery.level);
    let mut out = DayOutcome {
        cash: 0.0,
        trades: 0,
        buy_exec: false,
        sell_exec: false,
        forced_exec: false,
        battery_end: battery,
    };
    for hour in 1..=HOURS_PER_DAY {
        let p = actual[hour - 1];
        let mut delta = 0;
        if plan.h_star == Some(hour) {
            match plan.forced_kind {
                ForcedKind::Buy => {
                    out.cash -= buy_cost(p);
                    delta += 1;
                }
                ForcedKind::Sell => {
                    out.cash += sell_revenue(p);
                    delta -= 1;
                }
                ForcedKind::None => {}
            }
            out.forced_exec = plan.forced_kind != ForcedKind::None;
        }
        if plan.trade_flag && hour == plan.h1 && p <= plan.buy_limit {
            out.cash -= buy_cost(p);
            out.buy_exec = true;
            delta += 1;
        }
        if plan.trade_flag && hour == plan.h2 && p >= plan.sell_limit {
            out.cash += sell_revenue(p);
            out.sell_exec = true;
            delta -= 1;
        }
        level += delta;
        if !(0..=i32::from(CAPACITY)).contains(&level) {
            return Err(MarketError::LevelViolation { hour });
        }
    }
    out.trades = usize::from(out.buy_exec) + usize::from(out.sell_exec) + usize::from(out.forced_exec);
    out.battery_end = BatteryState { level: level as u8 };
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayRecord {
    pub date: NaiveDate,
    pub plan: DayPlan,
    pub outcome: DayOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeLedger {
    pub records: Vec<DayRecord>,
    pub total_profit: f64,
    pub n_trades: usize,
}

impl TradeLedger {
    /// `None` when no order was executed.
    pub fn profit_per_trade(&self) -> Option<f64> {
        (self.n_trades > 0).then(|| self.total_profit / self.n_trades as f64)
    }

    /// Running total of daily cash.
    pub fn cumulative_profit(&self) -> Vec<f64> {
        self.records
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r.outcome.cash;
                Some(*acc)
            })
            .collect()
    }
}

/// Daily plan and execution over the common period, starting at level 1.
pub fn run_strategy(
    forecasts: &ForecastSeries,
    prices: &PriceSeries,
    risk: &RiskConfig,
) -> Result<TradeLedger, MarketError> {
    if forecasts.dates() != prices.dates() {
        return Err(MarketError::Misaligned(format!(
            "{} forecast days vs {} price days",
            forecasts.n_days(),
            prices.n_days()
        )));
    }
    let mut battery = BatteryState::initial();
    let mut records = Vec::with_capacity(forecasts.n_days());
    let mut total_profit = 0.0;
    let mut n_trades = 0;
    for (d, &date) in forecasts.dates().iter().enumerate() {
        let plan = plan_day(&forecasts.medians(d), forecasts.day(d), battery, risk)?;
        let outcome = execute_day(&plan, prices.day(d), battery)?;
        battery = outcome.battery_end;
        total_profit += outcome.cash;
        n_trades += outcome.trades;
        records.push(DayRecord { date, plan, outcome });
    }
    Ok(TradeLedger {
        records,
        total_profit,
        n_trades,
    })
}

/// Best one-cycle spread of a day with perfect foresight.
pub fn best_spread(day: &[f64; HOURS_PER_DAY]) -> f64 {
    let mut min_buy = day[0];
    let mut best = f64::NEG_INFINITY;
    for &p in &day[1..] {
        best = best.max(spread(min_buy, p));
        min_buy = min_buy.min(p);
    }
    best
}

/// Worst one-cycle spread of a day.
pub fn worst_spread(day: &[f64; HOURS_PER_DAY]) -> f64 {
    let mut max_buy = day[0];
    let mut worst = f64::INFINITY;
    for &p in &day[1..] {
        worst = worst.min(spread(max_buy, p));
        max_buy = max_buy.max(p);
    }
    worst
}

fn sum_days(prices: &PriceSeries, f: impl Fn(&[f64; HOURS_PER_DAY]) -> f64 + Sync + Send) -> f64 {
    let daily: Vec<f64> = prices.days().par_iter().map(f).collect();
    daily.iter().sum()
}

/// Perfect-foresight benchmark: the best buy-then-sell pair every day.
pub fn crystal_ball(prices: &PriceSeries) -> f64 {
    sum_days(prices, best_spread)
}

/// The worst buy-then-sell pair every day.
pub fn worst_case(prices: &PriceSeries) -> f64 {
    sum_days(prices, worst_spread)
}

/// Buys at `h_buy` and sells at `h_sell` every day.
pub fn naive_fixed(prices: &PriceSeries, h_buy: usize, h_sell: usize) -> Result<f64, MarketError> {
    if !(1 <= h_buy && h_buy < h_sell && h_sell <= HOURS_PER_DAY) {
        return Err(MarketError::InvalidHours {
            buy: h_buy,
            sell: h_sell,
        });
    }
    Ok(sum_days(prices, |d| spread(d[h_buy - 1], d[h_sell - 1])))
}

/// `date,h1,h2,h_star,forced_kind,buy_limit,sell_limit,buy_exec,sell_exec,cash,battery_end`.
pub fn write_ledger_csv<W: Write>(writer: W, ledger: &TradeLedger) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "date",
        "h1",
        "h2",
        "h_star",
        "forced_kind",
        "buy_limit",
        "sell_limit",
        "buy_exec",
        "sell_exec",
        "cash",
        "battery_end",
    ])?;
    for r in &ledger.records {
        let p = &r.plan;
        w.write_record([
            format_date(r.date),
            p.h1.to_string(),
            p.h2.to_string(),
            p.h_star.map(|h| h.to_string()).unwrap_or_default(),
            p.forced_kind.as_str().to_string(),
            p.buy_limit.to_string(),
            p.sell_limit.to_string(),
            r.outcome.buy_exec.to_string(),
            r.outcome.sell_exec.to_string(),
            r.outcome.cash.to_string(),
            r.outcome.battery_end.level().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
