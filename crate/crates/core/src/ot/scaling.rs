//! Matrix-scaling solvers: balanced Sinkhorn-Knopp and the semi-relaxed
//! variant whose b-update is exponentiated by `f = gamma / (gamma + eps)`.

use ndarray::{Array1, Array2, Axis};

use super::{
    MarginalPair, OtError, ProbabilityMatrix, SolverConfig, TransportPlan, LOG_DOMAIN_EPS,
};

/// Balanced entropic OT: rows sum to 1, normalized column sums equal `1/N`.
///
/// `cfg.gamma` is ignored. Hitting `max_iter` is reported through
/// `converged = false`, not an error.
pub fn sinkhorn_balanced(
    p: &ProbabilityMatrix,
    cfg: &SolverConfig,
) -> Result<TransportPlan, OtError> {
    cfg.validate()?;
    let marginals = MarginalPair::uniform(p.nrows(), p.ncols());
    Ok(scale(p, cfg, &marginals, 1.0)?.plan)
}

/// Semi-relaxed entropic OT with exact row marginal `mu` and a KL penalty
/// of weight `cfg.gamma` pulling the column marginal toward `nu`.
///
/// At `gamma = 0` the plan is the row-normalization of `p^(1/eps)`; as
/// `gamma -> inf` it approaches the balanced solution.
pub fn semi_relaxed_ot(
    p: &ProbabilityMatrix,
    cfg: &SolverConfig,
    marginals: &MarginalPair,
) -> Result<TransportPlan, OtError> {
    cfg.validate()?;
    marginals.validate(p.nrows(), p.ncols())?;
    let f = cfg.gamma / (cfg.gamma + cfg.epsilon);
    Ok(scale(p, cfg, marginals, f)?.plan)
}

/// Plan plus the final log column scaling, which the bi-level baseline
/// reads as the dual potential of the inner problem.
pub(crate) struct ScaleOutcome {
    pub plan: TransportPlan,
    pub log_b: Array1<f64>,
}

/// Balanced solve against arbitrary marginals (used by the bi-level
/// baseline's inner step, where the column marginal is the current w).
pub(crate) fn balanced_with_marginals(
    p: &ProbabilityMatrix,
    cfg: &SolverConfig,
    marginals: &MarginalPair,
) -> Result<ScaleOutcome, OtError> {
    cfg.validate()?;
    marginals.validate(p.nrows(), p.ncols())?;
    scale(p, cfg, marginals, 1.0)
}

/// Shared scaling loop. Stops when the inf-norm of the change in `log b`
/// drops below `cfg.tol`; the final a-update restores exact row sums.
fn scale(
    p: &ProbabilityMatrix,
    cfg: &SolverConfig,
    marginals: &MarginalPair,
    f: f64,
) -> Result<ScaleOutcome, OtError> {
    let log_kernel = stabilized_log_kernel(p, cfg.epsilon);
    if cfg.epsilon < LOG_DOMAIN_EPS {
        scale_log_domain(&log_kernel, cfg, marginals, f, p.nrows())
    } else {
        scale_linear(&log_kernel.mapv(f64::exp), cfg, marginals, f, p.nrows())
    }
}

/// `log K = (log p - rowmax(log p)) / eps`. Subtracting the per-row max
/// only rescales the a vector, so the returned plan is unchanged, but it
/// keeps each row's largest kernel entry at 1.
fn stabilized_log_kernel(p: &ProbabilityMatrix, epsilon: f64) -> Array2<f64> {
    let mut log_k = p.values().mapv(f64::ln);
    for mut row in log_k.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max) / epsilon);
    }
    log_k
}

fn scale_linear(
    kernel: &Array2<f64>,
    cfg: &SolverConfig,
    marginals: &MarginalPair,
    f: f64,
    m_rows: usize,
) -> Result<ScaleOutcome, OtError> {
    let mut b = Array1::<f64>::ones(kernel.ncols());
    let mut converged = false;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;

    for iter in 1..=cfg.max_iter {
        let a = &marginals.mu / &kernel.dot(&b);
        let b_next = (&marginals.nu / &kernel.t().dot(&a)).mapv(|v| v.powf(f));
        if a.iter().chain(b_next.iter()).any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(OtError::NumericUnderflow);
        }
        residual = log_residual(&b_next, &b);
        b = b_next;
        iterations = iter;
        if residual < cfg.tol {
            converged = true;
            break;
        }
    }
    let a = &marginals.mu / &kernel.dot(&b);
    if a.iter().any(|v| !v.is_finite()) {
        return Err(OtError::NumericUnderflow);
    }

    let mut values = kernel * &b;
    let scale = m_rows as f64;
    for (mut row, &ai) in values.rows_mut().into_iter().zip(a.iter()) {
        row.mapv_inplace(|v| v * ai * scale);
    }
    let plan = TransportPlan { values, converged, iterations, final_residual: residual };
    Ok(ScaleOutcome { log_b: b.mapv(f64::ln), plan })
}

fn scale_log_domain(
    log_kernel: &Array2<f64>,
    cfg: &SolverConfig,
    marginals: &MarginalPair,
    f: f64,
    m_rows: usize,
) -> Result<ScaleOutcome, OtError> {
    let log_mu = marginals.mu.mapv(f64::ln);
    let log_nu = marginals.nu.mapv(f64::ln);
    let mut log_b = Array1::<f64>::zeros(log_kernel.ncols());
    let mut converged = false;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;

    for iter in 1..=cfg.max_iter {
        let log_a = &log_mu - &lse_rows(log_kernel, &log_b);
        let log_b_next = (&log_nu - &lse_cols(log_kernel, &log_a)).mapv(|v| v * f);
        if log_b_next.iter().any(|v| !v.is_finite()) {
            return Err(OtError::NumericUnderflow);
        }
        residual = (&log_b_next - &log_b)
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        log_b = log_b_next;
        iterations = iter;
        if residual < cfg.tol {
            converged = true;
            break;
        }
    }
    let log_a = &log_mu - &lse_rows(log_kernel, &log_b);

    let log_scale = (m_rows as f64).ln();
    let mut values = log_kernel.clone();
    for ((i, j), v) in values.indexed_iter_mut() {
        *v = (*v + log_a[i] + log_b[j] + log_scale).exp();
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(OtError::NumericUnderflow);
    }
    let plan = TransportPlan { values, converged, iterations, final_residual: residual };
    Ok(ScaleOutcome { plan, log_b })
}

/// `max_j |log(b_next_j) - log(b_j)|`, the Algorithm residual in log space.
fn log_residual(b_next: &Array1<f64>, b: &Array1<f64>) -> f64 {
    b_next
        .iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (&n, &o)| acc.max((n.ln() - o.ln()).abs()))
}

/// Row-wise log-sum-exp of `log_kernel + log_b` (length = rows).
fn lse_rows(log_kernel: &Array2<f64>, log_b: &Array1<f64>) -> Array1<f64> {
    Array1::from_iter(log_kernel.axis_iter(Axis(0)).map(|row| {
        let max = row
            .iter()
            .zip(log_b.iter())
            .map(|(&k, &b)| k + b)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let sum: f64 = row
            .iter()
            .zip(log_b.iter())
            .map(|(&k, &b)| (k + b - max).exp())
            .sum();
        max + sum.ln()
    }))
}

/// Column-wise log-sum-exp of `log_kernel + log_a` (length = cols).
fn lse_cols(log_kernel: &Array2<f64>, log_a: &Array1<f64>) -> Array1<f64> {
    Array1::from_iter(log_kernel.axis_iter(Axis(1)).map(|col| {
        let max = col
            .iter()
            .zip(log_a.iter())
            .map(|(&k, &a)| k + a)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let sum: f64 = col
            .iter()
            .zip(log_a.iter())
            .map(|(&k, &a)| (k + a - max).exp())
            .sum();
        max + sum.ln()
    }))
}
