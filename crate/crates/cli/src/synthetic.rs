//! Synthetic dataset in the standard layout, for smoke tests and demos.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{Days, NaiveDate};
use epfens::data::{prob, save_forecast_series, save_prices, Expert, ForecastSeries, PriceSeries, QuantileCurve};
use epfens::{HOURS_PER_DAY, N_QUANTILES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::standard_experts;
use crate::error::CliError;

/// `(bias, noise sd, forecast sd)` of an expert in the standard pool.
fn profile(name: &str, k: usize) -> (f64, f64, f64) {
    let jitter = 0.15 * (k % 4) as f64;
    if name.starts_with("DDNN_JSU") {
        (0.2 - jitter, 2.0 + jitter, 5.0)
    } else if name.starts_with("DDNN_N") {
        (-0.3 + jitter, 2.2 + jitter, 5.5)
    } else if name.starts_with("LEAR") {
        (0.8, 3.0 + jitter, 6.5)
    } else {
        (-0.6, 3.2 + jitter, 7.0)
    }
}

fn shape(h: usize) -> f64 {
    let h = h as f64 + 1.0;
    8.0 * (2.0 * PI * (h - 8.0) / 24.0).sin() + 10.0 * (-(h - 19.0).powi(2) / 4.0).exp()
        - 6.0 * (-(h - 4.0).powi(2) / 3.0).exp()
}

/// Prices and the twelve standard experts over `n_days` from `start`.
pub fn synthetic_dataset(seed: u64, start: NaiveDate, n_days: usize) -> (PriceSeries, Vec<Expert>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let dates: Vec<NaiveDate> = (0..n_days as u64)
        .map(|d| start.checked_add_days(Days::new(d)).expect("date in range"))
        .collect();
    let mut level = 0.0;
    let mut centres = Vec::with_capacity(n_days);
    let mut prices = Vec::with_capacity(n_days);
    for d in 0..n_days {
        level = 0.8 * level + 4.0 * unit.sample(&mut rng);
        let base = 40.0 + 10.0 * (2.0 * PI * d as f64 / 365.0).sin() + level;
        let mut day = [0.0; HOURS_PER_DAY];
        let mut centre = [0.0; HOURS_PER_DAY];
        for h in 0..HOURS_PER_DAY {
            centre[h] = base + shape(h);
            day[h] = centre[h] + 5.0 * unit.sample(&mut rng);
        }
        centres.push(centre);
        prices.push(day);
    }
    let logistic_sd = 3f64.sqrt() / PI;
    let z: Vec<f64> = (0..N_QUANTILES)
        .map(|i| (prob(i) / (1.0 - prob(i))).ln() * logistic_sd)
        .collect();
    let experts = standard_experts()
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let (bias, noise, sd) = profile(name, k);
            let mut curves = Vec::with_capacity(n_days * HOURS_PER_DAY);
            for centre in &centres {
                for c in centre {
                    let m = c + bias + noise * unit.sample(&mut rng);
                    let values = std::array::from_fn(|i| m + sd * z[i]);
                    curves.push(QuantileCurve::rearranged(values).expect("finite"));
                }
            }
            Expert {
                name: name.to_string(),
                forecasts: ForecastSeries::new(dates.clone(), curves).expect("consistent shape"),
            }
        })
        .collect();
    (PriceSeries::new(dates, prices).expect("consistent shape"), experts)
}

/// Writes `prices.csv` and one `<EXPERT>.csv` per standard expert to `dir`.
pub fn write_synthetic_dataset(dir: &Path, seed: u64, start: NaiveDate, n_days: usize) -> Result<(), CliError> {
    let (prices, experts) = synthetic_dataset(seed, start, n_days);
    save_prices(&dir.join("prices.csv"), &prices)?;
    for e in &experts {
        save_forecast_series(&dir.join(format!("{}.csv", e.name)), &e.forecasts)?;
    }
    Ok(())
}
