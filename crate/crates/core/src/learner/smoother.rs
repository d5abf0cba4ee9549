//! Penalized cubic B-spline smoothing of weight curves across quantiles.
//!
//! The basis uses equidistant knots spanning the probability grid
//! `[0.01, 0.99]`, extended by three knots on each side, so it is a partition
//! of unity on every grid point. With a second-order
//! difference penalty `P = DᵀD` the smoother
//! `H(λ) = B (BᵀB + λP)⁻¹ Bᵀ` reproduces constants for every `λ`.

use nalgebra::DMatrix;

use super::LearnerError;
use crate::combiner::WeightSurface;
use crate::data::{prob, N_QUANTILES};

const DEGREE: usize = 3;

/// Value of every degree-3 B-spline on `knots` at `x` (Cox-de Boor).
fn bspline_row(x: f64, knots: &[f64], n_basis: usize) -> Vec<f64> {
    let n_intervals = knots.len() - 1;
    let mut b: Vec<f64> = (0..n_intervals)
        .map(|j| if knots[j] <= x && x < knots[j + 1] { 1.0 } else { 0.0 })
        .collect();
    for k in 1..=DEGREE {
        let next: Vec<f64> = (0..n_intervals - k)
            .map(|j| {
                let left = (x - knots[j]) / (knots[j + k] - knots[j]) * b[j];
                let right = (knots[j + k + 1] - x) / (knots[j + k + 1] - knots[j + 1]) * b[j + 1];
                left + right
            })
            .collect();
        b = next;
    }
    debug_assert_eq!(b.len(), n_basis);
    b
}

/// Second-order difference operator, `(n - 2) × n`.
pub fn second_difference(n: usize) -> DMatrix<f64> {
    let rows = n.saturating_sub(2);
    let mut d = DMatrix::zeros(rows, n);
    for i in 0..rows {
        d[(i, i)] = 1.0;
        d[(i, i + 1)] = -2.0;
        d[(i, i + 2)] = 1.0;
    }
    d
}

#[derive(Debug, Clone)]
pub struct SmootherBasis {
    /// `99 × J` basis evaluated on the percentile grid.
    basis: DMatrix<f64>,
    /// `J × J` penalty `DᵀD`.
    penalty: DMatrix<f64>,
    difference: DMatrix<f64>,
}

impl SmootherBasis {
    /// Cubic basis with `n_basis` functions (`n_basis - 3` equal intervals
    /// between the first and last grid probability).
    pub fn cubic(n_basis: usize) -> Result<Self, LearnerError> {
        if !(DEGREE + 1..=N_QUANTILES).contains(&n_basis) {
            return Err(LearnerError::Config(format!(
                "basis size must be in {}..={N_QUANTILES}, got {n_basis}",
                DEGREE + 1
            )));
        }
        let n_intervals = n_basis - DEGREE;
        let (lo, hi) = (prob(0), prob(N_QUANTILES - 1));
        let step = (hi - lo) / n_intervals as f64;
        let knots: Vec<f64> = (0..n_basis + DEGREE + 1)
            .map(|m| lo + (m as f64 - DEGREE as f64) * step)
            .collect();
        let mut basis = DMatrix::zeros(N_QUANTILES, n_basis);
        for i in 0..N_QUANTILES {
            for (j, v) in bspline_row(prob(i), &knots, n_basis).into_iter().enumerate() {
                basis[(i, j)] = v;
            }
        }
        let difference = second_difference(n_basis);
        let penalty = difference.transpose() * &difference;
        Ok(Self {
            basis,
            penalty,
            difference,
        })
    }

    pub fn n_basis(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    /// Precomputes the smoother for one `λ`.
    ///
    /// With the thin QR `[B; √λ D] = QR` and `Q₁` the first 99 rows of `Q`,
    /// `B (BᵀB + λP)⁻¹ Bᵀ = Q₁ Q₁ᵀ`. This avoids squaring the condition
    /// number of `B`.
    pub fn operator(&self, lambda: f64) -> Result<SmoothingOperator, LearnerError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(LearnerError::Config(format!("invalid smoothing parameter {lambda}")));
        }
        let j = self.n_basis();
        let rows = N_QUANTILES + self.difference.nrows();
        let mut stacked = DMatrix::zeros(rows, j);
        stacked.rows_mut(0, N_QUANTILES).copy_from(&self.basis);
        stacked
            .rows_mut(N_QUANTILES, self.difference.nrows())
            .copy_from(&(&self.difference * lambda.sqrt()));
        let qr = stacked.qr();
        let r = qr.r();
        let scale = r.diagonal().abs().max();
        if r.diagonal().iter().any(|d| d.abs() <= scale * 1e-12) {
            return Err(LearnerError::SingularSmoother { lambda });
        }
        let q1 = qr.q().rows(0, N_QUANTILES).into_owned();
        Ok(SmoothingOperator {
            lambda,
            solve: q1.transpose(),
            basis: q1,
        })
    }

    /// The full `99 × 99` smoother matrix for `λ`.
    pub fn hat(&self, lambda: f64) -> Result<DMatrix<f64>, LearnerError> {
        Ok(self.operator(lambda)?.matrix())
    }
}

/// `H(λ)` kept in factored form `Q₁ Q₁ᵀ`.
#[derive(Debug, Clone)]
pub struct SmoothingOperator {
    lambda: f64,
    basis: DMatrix<f64>,
    solve: DMatrix<f64>,
}

impl SmoothingOperator {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        &self.basis * &self.solve
    }

    /// Smooths every column of a `99 × m` matrix.
    pub fn apply(&self, columns: &DMatrix<f64>) -> DMatrix<f64> {
        &self.basis * (&self.solve * columns)
    }
}

/// Smoothed weights plus the number of rows that fell back to uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedWeights {
    pub surface: WeightSurface,
    pub uniform_fallbacks: usize,
}

/// Smooths each (hour, expert) weight curve across quantiles, then clips
/// negative weights and renormalizes every (hour, quantile) row. A row that
/// is all zero after clipping becomes uniform.
pub fn smooth_weights(raw: &WeightSurface, op: &SmoothingOperator) -> SmoothedWeights {
    let (n_hours, k) = (raw.n_hours(), raw.n_experts());
    let columns = DMatrix::from_fn(N_QUANTILES, n_hours * k, |i, col| raw.get(col / k, i, col % k));
    let smoothed = op.apply(&columns);
    let mut out = vec![0.0; n_hours * N_QUANTILES * k];
    let mut uniform_fallbacks = 0;
    for (cell, row) in out.chunks_exact_mut(k).enumerate() {
        let (h, i) = (cell / N_QUANTILES, cell % N_QUANTILES);
        let mut total = 0.0;
        for (j, w) in row.iter_mut().enumerate() {
            let v = smoothed[(i, h * k + j)];
            *w = if v > 0.0 { v } else { 0.0 };
            total += *w;
        }
        if total > 0.0 && total.is_finite() {
            row.iter_mut().for_each(|w| *w /= total);
        } else {
            uniform_fallbacks += 1;
            row.fill(1.0 / k as f64);
        }
    }
    SmoothedWeights {
        surface: WeightSurface::from_raw_parts(n_hours, k, out),
        uniform_fallbacks,
    }
}
