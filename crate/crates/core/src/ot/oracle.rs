//! Verification oracle: entropic mirror descent on the semi-relaxed
//! objective, restricted to the feasible set of unit row sums.
//!
//! Deliberately shares no code with the scaling solver. Each row of the
//! normalized plan lives on a scaled simplex; the update multiplies by
//! `exp(-eta * grad)` and renormalizes the row. The objective is
//! `eps`-strongly convex and `(gamma + eps)`-smooth relative to entropy,
//! so the fixed step `1 / (gamma + eps)` converges linearly. Intended for
//! small instances (M <= 64) in tests.

use ndarray::{Array1, Array2};

use super::{OtError, ProbabilityMatrix, TransportPlan};

pub fn oracle_solve(
    p: &ProbabilityMatrix,
    gamma: f64,
    epsilon: f64,
    nu: &Array1<f64>,
    iters: usize,
) -> Result<TransportPlan, OtError> {
    if !gamma.is_finite() || !epsilon.is_finite() || epsilon <= 0.0 || gamma < 0.0 {
        return Err(OtError::InvalidConfig(format!(
            "gamma {gamma}, epsilon {epsilon}"
        )));
    }
    if nu.len() != p.ncols() {
        return Err(OtError::ShapeMismatch {
            expected: format!("nu len {}", p.ncols()),
            got: format!("nu len {}", nu.len()),
        });
    }
    let (m, n) = (p.nrows(), p.ncols());
    let m_f = m as f64;
    let cost = p.values().mapv(|v| -v.ln());

    // Normalized plan rows in log space, each summing to 1/M.
    let mut log_q = Array2::<f64>::from_elem((m, n), (1.0 / (m_f * n as f64)).ln());
    let eta = 1.0 / (gamma + epsilon);

    for _ in 0..iters {
        // Column marginal of the normalized plan.
        let mut col = vec![0.0f64; n];
        for i in 0..m {
            for (j, c) in col.iter_mut().enumerate() {
                *c += log_q[[i, j]].exp();
            }
        }
        for i in 0..m {
            let mut row_max = f64::NEG_INFINITY;
            for j in 0..n {
                let grad = cost[[i, j]]
                    + epsilon * (log_q[[i, j]] + 1.0)
                    + gamma * ((col[j].max(1e-300) / nu[j]).ln() + 1.0);
                log_q[[i, j]] -= eta * grad;
                row_max = row_max.max(log_q[[i, j]]);
            }
            // Renormalize the row to mass 1/M.
            let lse: f64 = (0..n).map(|j| (log_q[[i, j]] - row_max).exp()).sum();
            let shift = row_max + lse.ln() + m_f.ln();
            for j in 0..n {
                log_q[[i, j]] -= shift;
            }
        }
    }

    let values = log_q.mapv(|v| v.exp() * m_f);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(OtError::NonFiniteInput);
    }
    Ok(TransportPlan { values, converged: true, iterations: iters, final_residual: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::super::{semi_relaxed_ot, srot_objective, MarginalPair, SolverConfig};
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gamma_zero_rows_equal_row_normalized_p() {
        let p = ProbabilityMatrix::new(array![[0.8, 0.2], [0.3, 0.7]]).unwrap();
        let nu = array![0.5, 0.5];
        let plan = oracle_solve(&p, 0.0, 1.0, &nu, 5_000).unwrap();
        for (q, pv) in plan.values.iter().zip(p.values().iter()) {
            assert!((q - pv).abs() < 1e-9, "q {q} p {pv}");
        }
    }

    #[test]
    fn beats_every_plan_on_a_coarse_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ProbabilityMatrix::from_scores(Array2::from_shape_fn((2, 2), |_| {
            rng.gen_range(0.1..1.0)
        }))
        .unwrap();
        let nu = array![0.5, 0.5];
        let (gamma, eps) = (0.4, 0.2);
        let plan = oracle_solve(&p, gamma, eps, &nu, 50_000).unwrap();
        let best = srot_objective(&plan.values, &p, gamma, eps, &nu).unwrap();

        // Exhaustive 0.01-step grid over both row simplices.
        for a in 0..=100 {
            for b in 0..=100 {
                let q = array![
                    [a as f64 / 100.0, 1.0 - a as f64 / 100.0],
                    [b as f64 / 100.0, 1.0 - b as f64 / 100.0]
                ];
                let obj = srot_objective(&q, &p, gamma, eps, &nu).unwrap();
                assert!(best <= obj + 1e-9, "grid point ({a},{b}) beat oracle: {obj} < {best}");
            }
        }
    }

    #[test]
    fn cross_checks_with_scaling_solver_both_directions() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let p = ProbabilityMatrix::from_scores(Array2::from_shape_fn((8, 4), |_| {
                rng.gen_range(0.05..1.0)
            }))
            .unwrap();
            let nu = Array1::from_elem(4, 0.25);
            let (gamma, eps) = (0.5, 0.1);
            let scaled = semi_relaxed_ot(
                &p,
                &SolverConfig { epsilon: eps, gamma, tol: 1e-9, max_iter: 50_000 },
                &MarginalPair::uniform(8, 4),
            )
            .unwrap();
            let oracle = oracle_solve(&p, gamma, eps, &nu, 100_000).unwrap();
            let a = srot_objective(&scaled.values, &p, gamma, eps, &nu).unwrap();
            let b = srot_objective(&oracle.values, &p, gamma, eps, &nu).unwrap();
            assert!((a - b).abs() <= 1e-5 * b.abs(), "seed {seed}: {a} vs {b}");
        }
    }
}
