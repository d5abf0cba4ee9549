//! Horizontal (quantile-space) combination of expert forecasts.

use thiserror::Error;

use crate::data::{ExpertPanel, ForecastSeries, NonFiniteValue, QuantileCurve, HOURS_PER_DAY, N_QUANTILES};

/// Tolerance on the sum of one weight row.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CombineError {
    #[error("no curves to combine")]
    Empty,
    #[error("expected {expected} weights, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("weights at quantile {quantile} sum to {sum}")]
    RowSum { quantile: usize, sum: f64 },
    #[error("weight {weight} at quantile {quantile}, expert {expert} is negative or non-finite")]
    InvalidWeight {
        quantile: usize,
        expert: usize,
        weight: f64,
    },
    #[error(transparent)]
    NonFinite(#[from] NonFiniteValue),
}

/// Combination weights indexed by (hour, quantile, expert).
///
/// A surface with a single hour row applies to every hour of the day.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSurface {
    n_hours: usize,
    n_experts: usize,
    weights: Vec<f64>,
}

impl WeightSurface {
    pub fn uniform(n_hours: usize, n_experts: usize) -> Self {
        assert!(n_hours > 0 && n_experts > 0);
        Self {
            n_hours,
            n_experts,
            weights: vec![1.0 / n_experts as f64; n_hours * N_QUANTILES * n_experts],
        }
    }

    /// Validates shape, non-negativity and row sums.
    pub fn from_vec(n_hours: usize, n_experts: usize, weights: Vec<f64>) -> Result<Self, CombineError> {
        let expected = n_hours * N_QUANTILES * n_experts;
        if weights.len() != expected || n_experts == 0 {
            return Err(CombineError::Shape {
                expected,
                found: weights.len(),
            });
        }
        let s = Self {
            n_hours,
            n_experts,
            weights,
        };
        for h in 0..n_hours {
            check_rows(s.hour_block(h), n_experts)?;
        }
        Ok(s)
    }

    pub(crate) fn from_raw_parts(n_hours: usize, n_experts: usize, weights: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), n_hours * N_QUANTILES * n_experts);
        Self {
            n_hours,
            n_experts,
            weights,
        }
    }

    pub fn n_hours(&self) -> usize {
        self.n_hours
    }

    pub fn n_experts(&self) -> usize {
        self.n_experts
    }

    pub fn get(&self, hour: usize, quantile: usize, expert: usize) -> f64 {
        self.weights[(hour * N_QUANTILES + quantile) * self.n_experts + expert]
    }

    /// Weights of all experts at (hour, quantile).
    pub fn row(&self, hour: usize, quantile: usize) -> &[f64] {
        let start = (hour * N_QUANTILES + quantile) * self.n_experts;
        &self.weights[start..start + self.n_experts]
    }

    /// Quantile-major block of weights for `hour`, i.e. `99 × K` values.
    pub fn hour_block(&self, hour: usize) -> &[f64] {
        let len = N_QUANTILES * self.n_experts;
        &self.weights[hour * len..(hour + 1) * len]
    }

    /// Block used to combine delivery hour `hour` (0-based); pooled
    /// surfaces map every hour to their single row.
    pub fn block_for_hour(&self, hour: usize) -> &[f64] {
        self.hour_block(if self.n_hours == 1 { 0 } else { hour })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the largest weight at (hour, quantile); first wins on ties.
    pub fn argmax(&self, hour: usize, quantile: usize) -> usize {
        let row = self.row(hour, quantile);
        let mut best = 0;
        for (k, w) in row.iter().enumerate() {
            if *w > row[best] {
                best = k;
            }
        }
        best
    }
}

fn check_rows(block: &[f64], n_experts: usize) -> Result<(), CombineError> {
    for (quantile, row) in block.chunks_exact(n_experts).enumerate() {
        if let Some((expert, &weight)) = row.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(CombineError::InvalidWeight {
                quantile,
                expert,
                weight,
            });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(CombineError::RowSum { quantile, sum });
        }
    }
    Ok(())
}

/// Sorts a raw 99-vector ascending into a valid quantile function.
pub fn rearrange(values: &[f64]) -> Result<QuantileCurve, CombineError> {
    let values: [f64; N_QUANTILES] = values.try_into().map_err(|_| CombineError::Shape {
        expected: N_QUANTILES,
        found: values.len(),
    })?;
    Ok(QuantileCurve::rearranged(values)?)
}

/// Weighted per-quantile average of expert curves.
///
/// `weights` is quantile-major: `weights[i * K + k]` is expert `k`'s weight
/// at quantile `i`. Each output value is clamped to the experts' envelope at
/// that quantile (only rounding can take it outside) and the result is
/// rearranged.
pub fn horizontal_average(curves: &[&QuantileCurve], weights: &[f64]) -> Result<QuantileCurve, CombineError> {
    let k = curves.len();
    if k == 0 {
        return Err(CombineError::Empty);
    }
    if weights.len() != N_QUANTILES * k {
        return Err(CombineError::Shape {
            expected: N_QUANTILES * k,
            found: weights.len(),
        });
    }
    check_rows(weights, k)?;
    Ok(combine_unchecked(curves, weights))
}

pub(crate) fn combine_unchecked(curves: &[&QuantileCurve], weights: &[f64]) -> QuantileCurve {
    let k = curves.len();
    let mut out = [0.0; N_QUANTILES];
    for (i, (o, row)) in out.iter_mut().zip(weights.chunks_exact(k)).enumerate() {
        let mut acc = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (c, w) in curves.iter().zip(row) {
            let v = c.at(i);
            acc += w * v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        *o = acc.clamp(lo, hi);
    }
    QuantileCurve::rearranged(out).expect("convex combination of finite values")
}

/// Equal-weight average of the per-quantile values.
///
/// Values are summed in sorted order, so the result does not depend on the
/// order in which experts are listed.
pub fn equal_weight_average(curves: &[&QuantileCurve]) -> Result<QuantileCurve, CombineError> {
    let k = curves.len();
    if k == 0 {
        return Err(CombineError::Empty);
    }
    let mut out = [0.0; N_QUANTILES];
    let mut column = vec![0.0; k];
    for (i, o) in out.iter_mut().enumerate() {
        for (c, v) in curves.iter().zip(column.iter_mut()) {
            *v = c.at(i);
        }
        column.sort_by(f64::total_cmp);
        let mean = column.iter().sum::<f64>() / k as f64;
        *o = mean.clamp(column[0], column[k - 1]);
    }
    Ok(QuantileCurve::rearranged(out)?)
}

/// qEns: every (day, hour) combined with weight `1/K` on every quantile.
pub fn qens_combine(panel: &ExpertPanel) -> ForecastSeries {
    let mut curves = Vec::with_capacity(panel.n_days() * HOURS_PER_DAY);
    for d in 0..panel.n_days() {
        for h in 0..HOURS_PER_DAY {
            let c = equal_weight_average(&panel.curves_at(d, h)).expect("panel has experts");
            curves.push(c);
        }
    }
    ForecastSeries::new(panel.dates().to_vec(), curves).expect("shape follows panel")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Expert, MEDIAN_INDEX};
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_curve(rng: &mut impl Rng) -> QuantileCurve {
        let mut v = [0.0; N_QUANTILES];
        for x in v.iter_mut() {
            *x = rng.random_range(-100.0..300.0);
        }
        QuantileCurve::rearranged(v).unwrap()
    }

    fn constant_weights(row: &[f64]) -> Vec<f64> {
        (0..N_QUANTILES).flat_map(|_| row.iter().copied()).collect()
    }

    /// Curve whose median is `m`, linear around it.
    fn curve_with_median(m: f64, spread: f64) -> QuantileCurve {
        let v = std::array::from_fn(|i| m + spread * (i as f64 - MEDIAN_INDEX as f64) / 49.0);
        QuantileCurve::rearranged(v).unwrap()
    }

    #[test]
    fn two_expert_worked_example() {
        // Actual 31.89; expert medians with absolute errors 0.52 and 1.24.
        let actual = 31.89;
        let a = curve_with_median(31.37, 5.0);
        let b = curve_with_median(33.13, 14.0);
        let w = constant_weights(&[0.5, 0.5]);
        let c = horizontal_average(&[&a, &b], &w).unwrap();
        assert!((c.median() - 32.25).abs() < 1e-12);
        assert!(((c.median() - actual).abs() - 0.36).abs() < 1e-9);
    }

    #[test]
    fn identical_curves_are_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_curve(&mut rng);
        let w: Vec<f64> = (0..N_QUANTILES)
            .flat_map(|_| {
                let a: f64 = rng.random_range(0.0..1.0);
                let b: f64 = rng.random_range(0.0..1.0 - a);
                [a, b, 1.0 - a - b]
            })
            .collect();
        let out = horizontal_average(&[&c, &c, &c], &w).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn fixed_weights_match_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_curve(&mut rng);
        let b = random_curve(&mut rng);
        let out = horizontal_average(&[&a, &b], &constant_weights(&[0.25, 0.75])).unwrap();
        for i in 0..N_QUANTILES {
            let expected = 0.25 * a.values()[i] + 0.75 * b.values()[i];
            assert!((out.at(i) - expected).abs() < 1e-12, "quantile {i}");
        }
    }

    #[test]
    fn one_hot_returns_expert_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let curves: Vec<QuantileCurve> = (0..4).map(|_| random_curve(&mut rng)).collect();
        let refs: Vec<&QuantileCurve> = curves.iter().collect();
        for k in 0..4 {
            let mut row = [0.0; 4];
            row[k] = 1.0;
            let out = horizontal_average(&refs, &constant_weights(&row)).unwrap();
            assert_eq!(out, curves[k]);
        }
    }

    #[test]
    fn weight_errors() {
        let c = QuantileCurve::degenerate(1.0);
        assert_eq!(horizontal_average(&[], &[]), Err(CombineError::Empty));
        assert!(matches!(
            horizontal_average(&[&c, &c], &[0.5; 10]),
            Err(CombineError::Shape { .. })
        ));
        let mut w = constant_weights(&[0.5, 0.5]);
        w[20] = 0.6;
        assert!(matches!(
            horizontal_average(&[&c, &c], &w),
            Err(CombineError::RowSum { quantile: 10, .. })
        ));
        let w = constant_weights(&[1.5, -0.5]);
        assert!(matches!(
            horizontal_average(&[&c, &c], &w),
            Err(CombineError::InvalidWeight { expert: 1, .. })
        ));
    }

    #[test]
    fn rearrange_cases() {
        let sorted: Vec<f64> = (0..99).map(f64::from).collect();
        assert_eq!(rearrange(&sorted).unwrap().values().as_slice(), sorted.as_slice());
        let reversed: Vec<f64> = sorted.iter().rev().copied().collect();
        assert_eq!(rearrange(&reversed).unwrap().values().as_slice(), sorted.as_slice());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut distinct: Vec<f64> = (0..99).map(|_| rng.random_range(-1e3..1e3)).collect();
        let mut oracle = distinct.clone();
        distinct.shuffle(&mut rng);
        // selection sort oracle
        for i in 0..oracle.len() {
            let j = (i..oracle.len())
                .min_by(|&a, &b| oracle[a].partial_cmp(&oracle[b]).unwrap())
                .unwrap();
            oracle.swap(i, j);
        }
        assert_eq!(rearrange(&distinct).unwrap().values().as_slice(), oracle.as_slice());

        let mut bad = sorted.clone();
        bad[3] = f64::INFINITY;
        assert_eq!(
            rearrange(&bad),
            Err(CombineError::NonFinite(NonFiniteValue { index: 3 }))
        );
        assert!(matches!(rearrange(&[1.0]), Err(CombineError::Shape { .. })));
    }

    fn panel(curves_per_expert: Vec<Vec<QuantileCurve>>) -> ExpertPanel {
        let n_days = curves_per_expert[0].len() / HOURS_PER_DAY;
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let dates: Vec<NaiveDate> = start.iter_days().take(n_days).collect();
        ExpertPanel::new(
            curves_per_expert
                .into_iter()
                .enumerate()
                .map(|(i, c)| Expert {
                    name: format!("E{i}"),
                    forecasts: ForecastSeries::new(dates.clone(), c).unwrap(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn qens_single_expert_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let curves: Vec<QuantileCurve> = (0..48).map(|_| random_curve(&mut rng)).collect();
        let p = panel(vec![curves]);
        assert_eq!(qens_combine(&p), p.experts()[0].forecasts);
    }

    #[test]
    fn qens_midpoint() {
        let tens = vec![QuantileCurve::degenerate(10.0); 24];
        let twenties = vec![QuantileCurve::degenerate(20.0); 24];
        let out = qens_combine(&panel(vec![tens, twenties]));
        assert!(out.curves().iter().all(|c| *c == QuantileCurve::degenerate(15.0)));
    }

    #[test]
    fn pooled_surface_applies_to_every_hour() {
        let s = WeightSurface::uniform(1, 3);
        assert_eq!(s.block_for_hour(17), s.hour_block(0));
        let s = WeightSurface::uniform(24, 3);
        assert_eq!(s.block_for_hour(17).len(), 3 * N_QUANTILES);
        assert!(WeightSurface::from_vec(1, 2, vec![0.5; 198]).is_ok());
        assert!(WeightSurface::from_vec(1, 2, vec![0.4; 198]).is_err());
    }

    proptest! {
        #[test]
        fn combination_stays_in_envelope(seed in any::<u64>(), k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let curves: Vec<QuantileCurve> = (0..k).map(|_| random_curve(&mut rng)).collect();
            let refs: Vec<&QuantileCurve> = curves.iter().collect();
            let mut w = Vec::new();
            for _ in 0..N_QUANTILES {
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = raw.iter().sum();
                w.extend(raw.iter().map(|x| x / s));
            }
            let out = horizontal_average(&refs, &w).unwrap();
            for i in 0..N_QUANTILES {
                let lo = curves.iter().map(|c| c.at(i)).fold(f64::INFINITY, f64::min);
                let hi = curves.iter().map(|c| c.at(i)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= out.at(i) && out.at(i) <= hi);
            }
        }

        #[test]
        fn qens_is_permutation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let experts: Vec<Vec<QuantileCurve>> = (0..5)
                .map(|_| (0..24).map(|_| random_curve(&mut rng)).collect())
                .collect();
            let mut shuffled = experts.clone();
            shuffled.shuffle(&mut rng);
            prop_assert_eq!(qens_combine(&panel(experts)), qens_combine(&panel(shuffled)));
        }
    }
}
