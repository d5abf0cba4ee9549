//! Online choice of the smoothing parameter from cumulative CRPS.

use super::LearnerError;

/// `2^-5, 2^-4, ..., 2^5`.
pub fn default_lambda_grid() -> Vec<f64> {
    (-5..=5).map(|e| 2f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTracker {
    grid: Vec<f64>,
    cum_crps: Vec<f64>,
    active: usize,
}

impl LambdaTracker {
    /// `grid` must be non-empty, finite, non-negative and strictly increasing.
    pub fn new(grid: Vec<f64>) -> Result<Self, LearnerError> {
        if grid.is_empty() {
            return Err(LearnerError::Config("empty lambda grid".into()));
        }
        if grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LearnerError::Config(
                "lambda grid must be finite, non-negative and strictly increasing".into(),
            ));
        }
        let n = grid.len();
        Ok(Self {
            grid,
            cum_crps: vec![0.0; n],
            active: (n - 1) / 2,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn cum_crps(&self) -> &[f64] {
        &self.cum_crps
    }

    pub fn active_index(&self) -> usize {
        self.active
    }

    /// Adds one period's score per candidate and re-selects.
    pub fn observe(&mut self, scores: &[f64]) -> Result<(), LearnerError> {
        if scores.len() != self.grid.len() {
            return Err(LearnerError::Config(format!(
                "{} scores for {} lambda candidates",
                scores.len(),
                self.grid.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(LearnerError::NonFinite(format!("lambda score {s}")));
        }
        for (c, s) in self.cum_crps.iter_mut().zip(scores) {
            *c += s;
        }
        self.active = argmin_first(&self.cum_crps);
        Ok(())
    }
}

/// Cumulative scores this close to the minimum count as ties. Candidates
/// that produce identical forecasts (uniform weights are a fixed point of
/// every smoother) must not be separated by rounding noise.
const TIE_TOLERANCE: f64 = 1e-12;

fn argmin_first(v: &[f64]) -> usize {
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = TIE_TOLERANCE * min.abs().max(f64::MIN_POSITIVE);
    v.iter().position(|x| *x - min <= slack).expect("non-empty grid")
}

/// Currently selected `λ`: the smallest candidate with minimal cumulative
/// CRPS, or the median grid value before anything was observed.
pub fn select_lambda(tracker: &LambdaTracker) -> f64 {
    tracker.grid[tracker.active]
}
