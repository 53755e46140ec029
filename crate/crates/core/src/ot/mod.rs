//! Entropic optimal-transport solvers for pseudo-label generation.
//!
//! Given row-stochastic model predictions `P` (M points × N novel classes)
//! the cost matrix is `C = -log P`. Two solvers are provided:
//!
//! * [`sinkhorn_balanced`] enforces both marginals exactly (uniform rows,
//!   uniform columns) via Sinkhorn-Knopp scaling.
//! * [`semi_relaxed_ot`] keeps the row marginal exact but replaces the
//!   column constraint by a KL penalty of weight `gamma`, solved by the
//!   scaling iteration `a = mu / (K b)`, `b = (nu / (K^T a))^f` with
//!   `K = exp(log P / eps)` and `f = gamma / (gamma + eps)`.
//!
//! Plans follow the convention that every row sums to 1 (total mass M);
//! the `1/M` factors live in the objective, not the stored plan.

mod bilevel;
mod objective;
mod oracle;
mod scaling;

pub use bilevel::{bilevel_baseline, BilevelStats};
pub use objective::{entropy, kl_div, srot_objective};
pub use oracle::oracle_solve;
pub use scaling::{semi_relaxed_ot, sinkhorn_balanced};

use ndarray::{Array1, Array2};
use thiserror::Error;

/// Entries of a probability matrix are clamped to at least this value
/// before logs are taken; `-log P` is unbounded at zero.
pub const PROB_FLOOR: f64 = 1e-30;

/// Row sums of a probability matrix must match 1 within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-6;

/// Below this entropic weight the scaling loops run in log domain;
/// `K = P^(1/eps)` under- or overflows for smaller `eps`.
pub const LOG_DOMAIN_EPS: f64 = 0.02;

#[derive(Debug, Error)]
pub enum OtError {
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("scaling vector collapsed to zero or overflowed (epsilon too small for the cost range)")]
    NumericUnderflow,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("row {row} sums to {sum}, not 1 within {ROW_SUM_TOL}")]
    NotRowStochastic { row: usize, sum: f64 },
    #[error("kl divergence undefined: q is zero where p is positive (index {index})")]
    InvalidSupport { index: usize },
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("marginal does not sum to 1 within 1e-9 (sum {0})")]
    InvalidMarginal(f64),
    #[error("w update strayed {deviation} (L1) from the simplex, more than the 10x limit")]
    StepTooLarge { deviation: f64 },
}

/// Row-stochastic predictions over novel classes. Entries are clamped to
/// [`PROB_FLOOR`] at construction so `-log P` stays finite.
#[derive(Debug, Clone)]
pub struct ProbabilityMatrix {
    values: Array2<f64>,
}

impl ProbabilityMatrix {
    pub fn new(mut values: Array2<f64>) -> Result<Self, OtError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OtError::NonFiniteInput);
        }
        if let Some(v) = values.iter().find(|v| **v < 0.0) {
            return Err(OtError::InvalidConfig(format!("negative entry {v}")));
        }
        for (i, row) in values.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(OtError::NotRowStochastic { row: i, sum });
            }
        }
        values.mapv_inplace(|v| v.max(PROB_FLOOR));
        Ok(Self { values })
    }

    /// Row-normalizes arbitrary positive scores into a valid matrix.
    pub fn from_scores(scores: Array2<f64>) -> Result<Self, OtError> {
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(OtError::NonFiniteInput);
        }
        let mut values = scores;
        for mut row in values.rows_mut() {
            let sum: f64 = row.iter().map(|v| v.max(0.0)).sum();
            if sum <= 0.0 {
                return Err(OtError::InvalidConfig("row of non-positive scores".into()));
            }
            row.mapv_inplace(|v| v.max(0.0) / sum);
        }
        Self::new(values)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

/// Pseudo-label transport plan. Every row sums to 1; entries sum to M.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub values: Array2<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Last `max_j |log b_{t+1,j} - log b_{t,j}|` seen by the scaling loop.
    pub final_residual: f64,
}

impl TransportPlan {
    /// Normalized column marginal `(1/M) Q^T 1`, a point on the N-simplex.
    pub fn column_marginal(&self) -> Array1<f64> {
        let m = self.values.nrows() as f64;
        self.values.sum_axis(ndarray::Axis(0)) / m
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    /// Entropic weight epsilon > 0.
    pub epsilon: f64,
    /// KL penalty weight gamma >= 0 (ignored by the balanced solver).
    pub gamma: f64,
    /// Fixed-point residual threshold on log b.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { epsilon: 0.05, gamma: 1.0, tol: 1e-4, max_iter: 1000 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), OtError> {
        if !(self.epsilon > 0.0) {
            return Err(OtError::InvalidConfig(format!("epsilon {} must be > 0", self.epsilon)));
        }
        if !(self.tol > 0.0) {
            return Err(OtError::InvalidConfig(format!("tol {} must be > 0", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(OtError::InvalidConfig("max_iter must be >= 1".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(OtError::InvalidConfig(format!("gamma {} must be >= 0", self.gamma)));
        }
        Ok(())
    }
}

/// Prior marginals: `mu` over rows, `nu` over columns. Both on the simplex.
#[derive(Debug, Clone)]
pub struct MarginalPair {
    pub mu: Array1<f64>,
    pub nu: Array1<f64>,
}

impl MarginalPair {
    pub fn uniform(m: usize, n: usize) -> Self {
        Self {
            mu: Array1::from_elem(m, 1.0 / m as f64),
            nu: Array1::from_elem(n, 1.0 / n as f64),
        }
    }

    pub fn validate(&self, m: usize, n: usize) -> Result<(), OtError> {
        if self.mu.len() != m || self.nu.len() != n {
            return Err(OtError::ShapeMismatch {
                expected: format!("mu len {m}, nu len {n}"),
                got: format!("mu len {}, nu len {}", self.mu.len(), self.nu.len()),
            });
        }
        for v in [self.mu.sum(), self.nu.sum()] {
            if (v - 1.0).abs() > 1e-9 {
                return Err(OtError::InvalidMarginal(v));
            }
        }
        if self.mu.iter().chain(self.nu.iter()).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(OtError::NonFiniteInput);
        }
        Ok(())
    }
}
