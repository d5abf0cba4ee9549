//! Bernstein online aggregation with the gradient trick, one learner per
//! (hour, quantile) cell.
//!
//! For each cell and expert `k`, given the combined quantile `c`, the
//! expert's quantile `e_k` and realized price `x`:
//!
//! ```text
//! g   = 1{x < c} - p
//! r   = g · (c - e_k)
//! E   = max(E, |r|)
//! V   = V + r²
//! η   = min(1/(2E), sqrt(ln K / V), η_max)
//! R   = R + r · (1 - η r)
//! w_k ∝ w0_k · η_k · exp(η_k R_k)
//! ```
//!
//! Regret is never discounted.

use super::LearnerError;
use crate::combiner::WeightSurface;
use crate::data::{prob, QuantileCurve, N_QUANTILES};

/// Subgradient of the pinball loss with respect to the quantile forecast.
/// The tie `x == q` falls on the `x >= q` side.
#[inline]
pub fn pinball_subgradient(q: f64, x: f64, p: f64) -> f64 {
    if x < q {
        1.0 - p
    } else {
        -p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoaState {
    n_hours: usize,
    n_experts: usize,
    regret: Vec<f64>,
    variance: Vec<f64>,
    range: Vec<f64>,
    prior: Vec<f64>,
    eta_max: f64,
    days: usize,
}

impl BoaState {
    /// Fresh state with uniform prior weights.
    pub fn new(n_hours: usize, n_experts: usize, eta_max: f64) -> Result<Self, LearnerError> {
        if n_hours == 0 || n_experts == 0 {
            return Err(LearnerError::Config(
                "state needs at least one hour and one expert".into(),
            ));
        }
        if !(eta_max > 0.0 && eta_max.is_finite()) {
            return Err(LearnerError::Config(format!("invalid eta_max {eta_max}")));
        }
        let cells = n_hours * N_QUANTILES * n_experts;
        Ok(Self {
            n_hours,
            n_experts,
            regret: vec![0.0; cells],
            variance: vec![0.0; cells],
            range: vec![0.0; cells],
            prior: vec![1.0 / n_experts as f64; n_experts],
            eta_max,
            days: 0,
        })
    }

    /// State with given accumulators, laid out (hour, quantile, expert).
    pub fn from_parts(
        n_hours: usize,
        n_experts: usize,
        regret: Vec<f64>,
        variance: Vec<f64>,
        range: Vec<f64>,
        eta_max: f64,
    ) -> Result<Self, LearnerError> {
        let mut s = Self::new(n_hours, n_experts, eta_max)?;
        let cells = s.regret.len();
        if regret.len() != cells || variance.len() != cells || range.len() != cells {
            return Err(LearnerError::Config("accumulator shape mismatch".into()));
        }
        if variance.iter().chain(&range).any(|v| v.is_nan() || *v < 0.0) {
            return Err(LearnerError::Config("V and E must be non-negative".into()));
        }
        s.regret = regret;
        s.variance = variance;
        s.range = range;
        Ok(s)
    }

    pub fn n_hours(&self) -> usize {
        self.n_hours
    }

    pub fn n_experts(&self) -> usize {
        self.n_experts
    }

    /// Days completed via [`BoaState::finish_day`].
    pub fn days(&self) -> usize {
        self.days
    }

    pub fn finish_day(&mut self) {
        self.days += 1;
    }

    fn index(&self, hour: usize, quantile: usize, expert: usize) -> usize {
        (hour * N_QUANTILES + quantile) * self.n_experts + expert
    }

    pub fn regret(&self, hour: usize, quantile: usize, expert: usize) -> f64 {
        self.regret[self.index(hour, quantile, expert)]
    }

    pub fn variance(&self, hour: usize, quantile: usize, expert: usize) -> f64 {
        self.variance[self.index(hour, quantile, expert)]
    }

    pub fn range(&self, hour: usize, quantile: usize, expert: usize) -> f64 {
        self.range[self.index(hour, quantile, expert)]
    }

    fn rate_at(&self, idx: usize) -> f64 {
        let ln_k = (self.n_experts as f64).ln();
        let by_range = 1.0 / (2.0 * self.range[idx]);
        let by_variance = (ln_k / self.variance[idx]).sqrt();
        let eta = by_range.min(by_variance).min(self.eta_max);
        // K = 1 gives 0/0 once V > 0; any rate works for a single expert.
        if eta.is_nan() {
            self.eta_max
        } else {
            eta
        }
    }

    /// Learning rate of `expert` at (hour, quantile).
    pub fn learning_rate(&self, hour: usize, quantile: usize, expert: usize) -> f64 {
        self.rate_at(self.index(hour, quantile, expert))
    }

    /// Updates every quantile cell of `hour` after observing `x`.
    ///
    /// `combined` must be the forecast issued with weights derived from
    /// this state.
    pub fn step(
        &mut self,
        hour: usize,
        experts: &[&QuantileCurve],
        combined: &QuantileCurve,
        x: f64,
    ) -> Result<(), LearnerError> {
        if hour >= self.n_hours {
            return Err(LearnerError::Config(format!("hour {hour} out of range")));
        }
        if experts.len() != self.n_experts {
            return Err(LearnerError::Config(format!(
                "{} expert curves for a {}-expert state",
                experts.len(),
                self.n_experts
            )));
        }
        if !x.is_finite() {
            return Err(LearnerError::NonFinite(format!("price {x} at hour {hour}")));
        }
        for i in 0..N_QUANTILES {
            let c = combined.at(i);
            let g = pinball_subgradient(c, x, prob(i));
            for (k, e) in experts.iter().enumerate() {
                let idx = self.index(hour, i, k);
                let r = g * (c - e.at(i));
                if !r.is_finite() {
                    return Err(LearnerError::NonFinite(format!(
                        "regret at hour {hour}, quantile {i}, expert {k}"
                    )));
                }
                self.range[idx] = self.range[idx].max(r.abs());
                self.variance[idx] += r * r;
                let eta = self.rate_at(idx);
                self.regret[idx] += r * (1.0 - eta * r);
            }
        }
        Ok(())
    }

    /// Normalized weights `∝ w0 · η · exp(η R)`, computed in the log domain.
    pub fn weights(&self) -> Result<WeightSurface, LearnerError> {
        let k = self.n_experts;
        let mut out = vec![0.0; self.regret.len()];
        let mut logits = vec![0.0; k];
        for (cell, chunk) in out.chunks_exact_mut(k).enumerate() {
            let base = cell * k;
            for (j, l) in logits.iter_mut().enumerate() {
                let eta = self.rate_at(base + j);
                *l = self.prior[j].ln() + eta.ln() + eta * self.regret[base + j];
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                let (hour, quantile) = (cell / N_QUANTILES, cell % N_QUANTILES);
                return Err(LearnerError::Overflow { hour, quantile });
            }
            let mut total = 0.0;
            for (w, l) in chunk.iter_mut().zip(&logits) {
                *w = (l - max).exp();
                total += *w;
            }
            for w in chunk.iter_mut() {
                *w /= total;
            }
        }
        Ok(WeightSurface::from_raw_parts(self.n_hours, k, out))
    }
}
