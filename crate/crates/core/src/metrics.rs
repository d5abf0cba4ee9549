//! Scoring rules for quantile forecasts and the Diebold-Mariano comparison.
//!
//! CRPS is approximated by twice the mean pinball loss over the 99-point
//! percentile grid. For a point mass it reduces to the absolute error.

use chrono::NaiveDate;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::data::{prob, ForecastSeries, PriceSeries, QuantileCurve, HOURS_PER_DAY, N_QUANTILES};

/// Below this many days the normal reference of the DM test is unreliable.
pub const DM_MIN_RECOMMENDED_DAYS: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("forecasts and prices have no dates in common")]
    EmptyOverlap,
    #[error("loss panels cover different dates")]
    DateMismatch,
    #[error("degenerate differential: loss differences have zero variance")]
    DegenerateDifferential,
    #[error("at least two days are needed, got {0}")]
    TooFewDays(usize),
    #[error("invalid loss panel: {0}")]
    Invalid(String),
}

/// Pinball loss `(1{x < q} - p)(q - x)`.
#[inline]
pub fn quantile_loss(q: f64, x: f64, p: f64) -> f64 {
    let indicator = if x < q { 1.0 } else { 0.0 };
    (indicator - p) * (q - x)
}

/// `(2/M) Σ QL_{p_i}(curve[i], x)` with compensated summation.
pub fn crps_approx(curve: &QuantileCurve, x: f64) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for (i, &q) in curve.values().iter().enumerate() {
        let term = quantile_loss(q, x, prob(i));
        // Neumaier
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    2.0 * (sum + comp) / N_QUANTILES as f64
}

/// Per-observation losses of one model, one row of 24 per day.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPanel {
    dates: Vec<NaiveDate>,
    values: Vec<[f64; HOURS_PER_DAY]>,
}

impl LossPanel {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<[f64; HOURS_PER_DAY]>) -> Result<Self, MetricsError> {
        if dates.len() != values.len() {
            return Err(MetricsError::Invalid(format!(
                "{} dates, {} rows",
                dates.len(),
                values.len()
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MetricsError::Invalid("non-finite loss".into()));
        }
        Ok(Self { dates, values })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn rows(&self) -> &[[f64; HOURS_PER_DAY]] {
        &self.values
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn mean(&self) -> f64 {
        let n = (self.values.len() * HOURS_PER_DAY) as f64;
        self.values.iter().flatten().sum::<f64>() / n
    }

    /// L1 norm of each day's 24-vector; losses are non-negative so this is the sum.
    pub fn daily_totals(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.iter().map(|v| v.abs()).sum()).collect()
    }
}

/// Day offsets `(forecast_start, price_start, n_days)` of the common dates.
fn overlap(series: &ForecastSeries, prices: &PriceSeries) -> Result<(usize, usize, usize), MetricsError> {
    let (fd, pd) = (series.dates(), prices.dates());
    let (Some(&f0), Some(&p0)) = (fd.first(), pd.first()) else {
        return Err(MetricsError::EmptyOverlap);
    };
    let first = f0.max(p0);
    let fs = (first - f0).num_days() as usize;
    let ps = (first - p0).num_days() as usize;
    if fs >= fd.len() || ps >= pd.len() {
        return Err(MetricsError::EmptyOverlap);
    }
    Ok((fs, ps, (fd.len() - fs).min(pd.len() - ps)))
}

fn map_overlap<F>(series: &ForecastSeries, prices: &PriceSeries, mut f: F) -> Result<usize, MetricsError>
where
    F: FnMut(usize, &QuantileCurve, f64),
{
    let (fs, ps, n) = overlap(series, prices)?;
    for d in 0..n {
        let actual = prices.day(ps + d);
        for (h, curve) in series.day(fs + d).iter().enumerate() {
            f(d, curve, actual[h]);
        }
    }
    Ok(n)
}

/// Hourly CRPS of a forecast series over the dates it shares with `prices`.
pub fn crps_panel(series: &ForecastSeries, prices: &PriceSeries) -> Result<LossPanel, MetricsError> {
    let (fs, ps, n) = overlap(series, prices)?;
    let mut values = vec![[0.0; HOURS_PER_DAY]; n];
    for (d, row) in values.iter_mut().enumerate() {
        let actual = prices.day(ps + d);
        for (h, v) in row.iter_mut().enumerate() {
            *v = crps_approx(series.curve(fs + d, h), actual[h]);
        }
    }
    LossPanel::new(series.dates()[fs..fs + n].to_vec(), values)
}

/// Mean CRPS over all overlapping observations.
pub fn mean_crps(series: &ForecastSeries, prices: &PriceSeries) -> Result<f64, MetricsError> {
    Ok(crps_panel(series, prices)?.mean())
}

/// Mean pinball loss at each of the 99 grid levels.
pub fn pinball_profile(series: &ForecastSeries, prices: &PriceSeries) -> Result<[f64; N_QUANTILES], MetricsError> {
    let mut sums = [0.0; N_QUANTILES];
    let n = map_overlap(series, prices, |_, c, x| {
        for (i, s) in sums.iter_mut().enumerate() {
            *s += quantile_loss(c.at(i), x, prob(i));
        }
    })?;
    let count = (n * HOURS_PER_DAY) as f64;
    Ok(sums.map(|s| s / count))
}

/// MAE of the 50th percentile.
pub fn mae_median(series: &ForecastSeries, prices: &PriceSeries) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let n = map_overlap(series, prices, |_, c, x| sum += (c.median() - x).abs())?;
    Ok(sum / (n * HOURS_PER_DAY) as f64)
}

/// RMSE of the distribution mean (average of the 99 percentiles).
pub fn rmse_mean(series: &ForecastSeries, prices: &PriceSeries) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let n = map_overlap(series, prices, |_, c, x| {
        let e = c.mean() - x;
        sum += e * e;
    })?;
    Ok((sum / (n * HOURS_PER_DAY) as f64).sqrt())
}

/// Outcome of a Diebold-Mariano comparison of model A against model B.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmResult {
    /// `sqrt(n) · mean(Δ) / sd(Δ)` with `Δ_d = ‖L_d^A‖₁ − ‖L_d^B‖₁`.
    pub stat: f64,
    /// One-sided p-value for "A has lower loss than B".
    pub p_better: f64,
    /// One-sided p-value for "A has higher loss than B".
    pub p_worse: f64,
    pub n_days: usize,
}

pub(crate) fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Multivariate DM test on daily L1-aggregated losses.
///
/// Uses the plain sample standard deviation of the differential and a
/// standard normal reference.
pub fn dm_test(loss_a: &LossPanel, loss_b: &LossPanel) -> Result<DmResult, MetricsError> {
    if loss_a.dates != loss_b.dates {
        return Err(MetricsError::DateMismatch);
    }
    let n = loss_a.n_days();
    if n < 2 {
        return Err(MetricsError::TooFewDays(n));
    }
    if n < DM_MIN_RECOMMENDED_DAYS {
        log::warn!("DM test on {n} days; at least {DM_MIN_RECOMMENDED_DAYS} recommended");
    }
    let diff: Vec<f64> = loss_a
        .daily_totals()
        .into_iter()
        .zip(loss_b.daily_totals())
        .map(|(a, b)| a - b)
        .collect();
    dm_from_differential(&diff)
}

/// DM statistic for an already computed loss differential series.
pub fn dm_from_differential(diff: &[f64]) -> Result<DmResult, MetricsError> {
    let n = diff.len();
    if n < 2 {
        return Err(MetricsError::TooFewDays(n));
    }
    let nf = n as f64;
    let mean = diff.iter().sum::<f64>() / nf;
    let var = diff.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    if sd.is_nan() || sd <= 0.0 || sd <= mean.abs() * 1e-14 {
        return Err(MetricsError::DegenerateDifferential);
    }
    let stat = nf.sqrt() * mean / sd;
    Ok(DmResult {
        stat,
        p_better: standard_normal_cdf(stat),
        p_worse: standard_normal_cdf(-stat),
        n_days: n,
    })
}

/// Pairwise p-values: `cell[row][col]` is the p-value that model `col`
/// beats model `row` (rows the worse axis, columns the better axis).
/// `None` on the diagonal and for incomparable pairs.
pub fn dm_pvalue_matrix(panels: &[&LossPanel]) -> Vec<Vec<Option<f64>>> {
    let n = panels.len();
    let mut m = vec![vec![None; n]; n];
    for (row, cells) in m.iter_mut().enumerate() {
        for (col, cell) in cells.iter_mut().enumerate() {
            if row != col {
                *cell = dm_test(panels[col], panels[row]).ok().map(|r| r.p_better);
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::MEDIAN_INDEX;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn dates(n: usize) -> Vec<NaiveDate> {
        NaiveDate::from_ymd_opt(2020, 1, 1)
            .unwrap()
            .iter_days()
            .take(n)
            .collect()
    }

    fn random_curve(rng: &mut impl Rng) -> QuantileCurve {
        let v = std::array::from_fn(|_| rng.random_range(0.0..100.0));
        QuantileCurve::rearranged(v).unwrap()
    }

    fn random_setup(seed: u64, n_days: usize) -> (ForecastSeries, PriceSeries) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let curves = (0..n_days * 24).map(|_| random_curve(&mut rng)).collect();
        let prices = (0..n_days)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..100.0)))
            .collect();
        (
            ForecastSeries::new(dates(n_days), curves).unwrap(),
            PriceSeries::new(dates(n_days), prices).unwrap(),
        )
    }

    #[test]
    fn quantile_loss_examples() {
        assert_eq!(quantile_loss(10.0, 12.0, 0.5), 1.0);
        for p in [0.01, 0.3, 0.99] {
            assert_eq!(quantile_loss(7.0, 7.0, p), 0.0);
        }
        let v = quantile_loss(15.0, 10.0, 0.9);
        assert!((v - 0.5).abs() < 1e-12);
        // asymmetric absolute form
        let alt = |q: f64, x: f64, p: f64| p * (x - q).max(0.0) + (1.0 - p) * (q - x).max(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (q, x, p) = (
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(0.001..0.999),
            );
            let l = quantile_loss(q, x, p);
            assert!(l >= 0.0);
            assert!((l - alt(q, x, p)).abs() < 1e-12);
        }
    }

    #[test]
    fn crps_of_point_mass_is_absolute_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let m: f64 = rng.random_range(-100.0..300.0);
            let x: f64 = rng.random_range(-100.0..300.0);
            let v = crps_approx(&QuantileCurve::degenerate(m), x);
            assert!((v - (m - x).abs()).abs() < 1e-12, "m={m} x={x} v={v}");
        }
        assert_eq!(crps_approx(&QuantileCurve::degenerate(4.0), 4.0), 0.0);
    }

    /// Inverse of the standard normal CDF by bisection on `erfc`.
    fn normal_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if standard_normal_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn crps_matches_integral_for_normal_quantiles() {
        let values = std::array::from_fn(|i| normal_quantile(prob(i)));
        let curve = QuantileCurve::rearranged(values).unwrap();
        let x = 0.0;
        // midpoint rule on (Φ(y) - 1{y >= x})^2
        let (lo, hi, n) = (-12.0, 12.0, 240_000);
        let dy = (hi - lo) / n as f64;
        let integral: f64 = (0..n)
            .map(|j| {
                let y = lo + (j as f64 + 0.5) * dy;
                let step = if y >= x { 1.0 } else { 0.0 };
                (standard_normal_cdf(y) - step).powi(2) * dy
            })
            .sum();
        let v = crps_approx(&curve, x);
        // exact CRPS of N(0,1) at 0 is 0.2337
        assert!((v - integral).abs() < 2e-2, "approx={v} integral={integral}");
        assert!((v - 0.2337).abs() < 2e-2);
    }

    #[test]
    fn crps_is_one_lipschitz_below_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let c = random_curve(&mut rng);
            let x = c.at(0) - rng.random_range(0.0..10.0);
            let delta = rng.random_range(0.0..5.0);
            let inc = crps_approx(&c, x - delta) - crps_approx(&c, x);
            assert!(inc >= -1e-12 && inc <= delta + 1e-12);
        }
    }

    #[test]
    fn crps_zero_only_at_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let c = random_curve(&mut rng);
            assert!(crps_approx(&c, rng.random_range(0.0..100.0)) > 0.0);
        }
    }

    #[test]
    fn mae_and_rmse() {
        let n = 3;
        let prices = PriceSeries::new(dates(n), vec![std::array::from_fn(|h| h as f64); n]).unwrap();
        let exact: Vec<QuantileCurve> = (0..n * 24)
            .map(|i| QuantileCurve::degenerate((i % 24) as f64))
            .collect();
        let exact = ForecastSeries::new(dates(n), exact).unwrap();
        assert_eq!(mae_median(&exact, &prices).unwrap(), 0.0);
        assert_eq!(rmse_mean(&exact, &prices).unwrap(), 0.0);

        let biased: Vec<QuantileCurve> = (0..n * 24)
            .map(|i| QuantileCurve::degenerate((i % 24) as f64 + 2.0))
            .collect();
        let biased = ForecastSeries::new(dates(n), biased).unwrap();
        assert!((mae_median(&biased, &prices).unwrap() - 2.0).abs() < 1e-12);

        let low: Vec<QuantileCurve> = (0..n * 24)
            .map(|i| QuantileCurve::degenerate((i % 24) as f64 - 3.0))
            .collect();
        let low = ForecastSeries::new(dates(n), low).unwrap();
        assert!((rmse_mean(&low, &prices).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mae_rmse_match_elementwise_oracle() {
        let (f, p) = random_setup(5, 3);
        let mut abs = Vec::new();
        let mut sq = Vec::new();
        for d in 0..3 {
            for h in 0..24 {
                let c = f.curve(d, h);
                abs.push((c.values()[MEDIAN_INDEX] - p.day(d)[h]).abs());
                let mean: f64 = c.values().iter().sum::<f64>() / 99.0;
                sq.push((mean - p.day(d)[h]).powi(2));
            }
        }
        let mae = abs.iter().sum::<f64>() / 72.0;
        let rmse = (sq.iter().sum::<f64>() / 72.0).sqrt();
        assert!((mae_median(&f, &p).unwrap() - mae).abs() < 1e-12);
        assert!((rmse_mean(&f, &p).unwrap() - rmse).abs() < 1e-12);
    }

    #[test]
    fn metrics_use_common_dates_only() {
        let (f, p) = random_setup(6, 5);
        let later = p.restrict(p.dates()[2], p.dates()[4]).unwrap();
        let panel = crps_panel(&f, &later).unwrap();
        assert_eq!(panel.dates(), later.dates());
        let disjoint = PriceSeries::new(
            NaiveDate::from_ymd_opt(2030, 1, 1)
                .unwrap()
                .iter_days()
                .take(1)
                .collect(),
            vec![[0.0; 24]],
        )
        .unwrap();
        assert_eq!(mae_median(&f, &disjoint), Err(MetricsError::EmptyOverlap));
    }

    #[test]
    fn degenerate_curves_make_crps_equal_mae() {
        let (f, p) = random_setup(7, 4);
        let medians: Vec<QuantileCurve> = f
            .curves()
            .iter()
            .map(|c| QuantileCurve::degenerate(c.median()))
            .collect();
        let g = ForecastSeries::new(f.dates().to_vec(), medians).unwrap();
        let crps = mean_crps(&g, &p).unwrap();
        let mae = mae_median(&g, &p).unwrap();
        assert!((crps - mae).abs() < 1e-12);
    }

    #[test]
    fn pinball_profile_averages_to_half_crps() {
        let (f, p) = random_setup(8, 2);
        let prof = pinball_profile(&f, &p).unwrap();
        let crps = mean_crps(&f, &p).unwrap();
        let avg = 2.0 * prof.iter().sum::<f64>() / 99.0;
        assert!((avg - crps).abs() < 1e-10);
    }

    fn loss_panel(rows: Vec<[f64; 24]>) -> LossPanel {
        LossPanel::new(dates(rows.len()), rows).unwrap()
    }

    #[test]
    fn dm_identical_models_are_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<[f64; 24]> = (0..40)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..5.0)))
            .collect();
        let a = loss_panel(rows.clone());
        assert_eq!(dm_test(&a, &a), Err(MetricsError::DegenerateDifferential));
    }

    #[test]
    fn dm_clearly_better_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let b_rows: Vec<[f64; 24]> = (0..100)
            .map(|_| std::array::from_fn(|_| rng.random_range(1.0..5.0)))
            .collect();
        let mut a_rows: Vec<[f64; 24]> = b_rows.iter().map(|r| r.map(|v| v - 1.0)).collect();
        a_rows[50] = b_rows[50].map(|v| v + rng.random_range(-0.5..0.5));
        let (a, b) = (loss_panel(a_rows.clone()), loss_panel(b_rows.clone()));
        let r = dm_test(&a, &b).unwrap();

        // direct evaluation
        let diff: Vec<f64> = a_rows
            .iter()
            .zip(&b_rows)
            .map(|(x, y)| x.iter().sum::<f64>() - y.iter().sum::<f64>())
            .collect();
        let mean = diff.iter().sum::<f64>() / 100.0;
        let sd = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
        let stat = 10.0 * mean / sd;
        assert!((r.stat - stat).abs() < 1e-9 * stat.abs());
        assert!(r.stat < -10.0);
        assert!(r.p_better < 1e-12);
        assert!((r.p_better + r.p_worse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dm_antisymmetric_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mk = |rng: &mut ChaCha8Rng| {
            (0..60)
                .map(|_| std::array::from_fn(|_| rng.random_range(0.0..3.0)))
                .collect::<Vec<[f64; 24]>>()
        };
        let (ra, rb) = (mk(&mut rng), mk(&mut rng));
        let (a, b) = (loss_panel(ra.clone()), loss_panel(rb.clone()));
        let ab = dm_test(&a, &b).unwrap();
        let ba = dm_test(&b, &a).unwrap();
        assert_eq!(ab.stat, -ba.stat);
        assert_eq!(ab.p_better, ba.p_worse);

        let shifted = |r: &Vec<[f64; 24]>| loss_panel(r.iter().map(|x| x.map(|v| v + 2.5)).collect());
        let s = dm_test(&shifted(&ra), &shifted(&rb)).unwrap();
        assert!((s.stat - ab.stat).abs() < 1e-9);
    }

    #[test]
    fn dm_null_p_values_center_on_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let reps = 200;
        let mut total = 0.0;
        for _ in 0..reps {
            let diff: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
            total += dm_from_differential(&diff).unwrap().p_better;
        }
        let mean = total / reps as f64;
        assert!((mean - 0.5).abs() < 0.05, "mean p = {mean}");
    }

    #[test]
    fn dm_matrix_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let good: Vec<[f64; 24]> = (0..50)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
            .collect();
        let bad: Vec<[f64; 24]> = good.iter().map(|r| r.map(|v| v + 1.0 + 0.1 * v * v)).collect();
        let (g, b) = (loss_panel(good), loss_panel(bad));
        let m = dm_pvalue_matrix(&[&g, &b, &g]);
        assert_eq!(m[0][0], None);
        // row = worse (b), column = better (g)
        assert!(m[1][0].unwrap() < 1e-6);
        assert!(m[0][1].unwrap() > 1.0 - 1e-6);
        assert_eq!(m[0][2], None, "identical models are incomparable");
    }
}
