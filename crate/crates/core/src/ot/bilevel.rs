//! Bi-level baseline: alternate between a balanced Sinkhorn solve with the
//! current column-size estimate `w` and a projected gradient step on `w`.
//!
//! The outer objective is `V(w) + gamma * KL(w, nu)` where `V(w)` is the
//! entropic transport cost under column marginal `w`. By the envelope
//! theorem `dV/dw_j` is the column dual potential `eps * log b_j`, read
//! off the inner solve's scaling vector. Each inner solve runs a fixed 50
//! scaling iterations; the gradient is centered on the simplex tangent
//! before stepping, then clamped positive and renormalized.

use std::time::Instant;

use ndarray::Array1;

use super::scaling::balanced_with_marginals;
use super::{MarginalPair, OtError, ProbabilityMatrix, SolverConfig, TransportPlan};

const INNER_ITERS: usize = 50;
const W_FLOOR: f64 = 1e-12;
/// A raw update farther than this (L1) from its projection is an error.
const MAX_SIMPLEX_DEVIATION: f64 = 10.0;

#[derive(Debug, Clone, Copy)]
pub struct BilevelStats {
    pub wall_seconds: f64,
    pub outer_iters: usize,
    pub inner_iters_total: usize,
}

/// Runs `outer_iters` w-updates, starting from `w = nu` (uniform prior).
/// With `outer_iters = 0` this is exactly one balanced solve at `nu`.
pub fn bilevel_baseline(
    p: &ProbabilityMatrix,
    cfg: &SolverConfig,
    w_step: f64,
    outer_iters: usize,
) -> Result<(TransportPlan, BilevelStats), OtError> {
    cfg.validate()?;
    if !(w_step > 0.0) {
        return Err(OtError::InvalidConfig(format!("w_step {w_step} must be > 0")));
    }
    let start = Instant::now();
    let (m, n) = (p.nrows(), p.ncols());
    let nu = Array1::from_elem(n, 1.0 / n as f64);
    let mu = Array1::from_elem(m, 1.0 / m as f64);
    let mut w = nu.clone();
    let inner_cfg = SolverConfig { max_iter: INNER_ITERS, ..*cfg };

    let mut outcome =
        balanced_with_marginals(p, &inner_cfg, &MarginalPair { mu: mu.clone(), nu: w.clone() })?;
    let mut inner_total = outcome.plan.iterations;

    for _ in 0..outer_iters {
        let mut grad = Array1::from_shape_fn(n, |j| {
            cfg.epsilon * outcome.log_b[j]
                + cfg.gamma * ((w[j].max(W_FLOOR) / nu[j]).ln() + 1.0)
        });
        let mean = grad.mean().unwrap_or(0.0);
        grad.mapv_inplace(|g| g - mean);

        let raw = &w - &grad.mapv(|g| g * w_step);
        let projected = project_simplex(&raw);
        let deviation: f64 =
            raw.iter().zip(projected.iter()).map(|(r, p)| (r - p).abs()).sum();
        if deviation > MAX_SIMPLEX_DEVIATION {
            return Err(OtError::StepTooLarge { deviation });
        }
        w = projected;

        outcome =
            balanced_with_marginals(p, &inner_cfg, &MarginalPair { mu: mu.clone(), nu: w.clone() })?;
        inner_total += outcome.plan.iterations;
    }

    let stats = BilevelStats {
        wall_seconds: start.elapsed().as_secs_f64(),
        outer_iters,
        inner_iters_total: inner_total,
    };
    Ok((outcome.plan, stats))
}

fn project_simplex(raw: &Array1<f64>) -> Array1<f64> {
    let clamped = raw.mapv(|v| v.max(W_FLOOR));
    let sum = clamped.sum();
    clamped.mapv(|v| v / sum)
}

#[cfg(test)]
mod tests {
    use super::super::{semi_relaxed_ot, sinkhorn_balanced, srot_objective, MarginalPair};
    use super::*;
    use ndarray::Array2;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_prob(m: usize, n: usize, seed: u64) -> ProbabilityMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ProbabilityMatrix::from_scores(Array2::from_shape_fn((m, n), |_| {
            rng.gen_range(0.05..1.0)
        }))
        .unwrap()
    }

    #[test]
    fn zero_outer_iters_equals_balanced_solve() {
        let p = random_prob(6, 3, 2);
        let cfg = SolverConfig { epsilon: 0.05, gamma: 0.5, ..Default::default() };
        let (plan, stats) = bilevel_baseline(&p, &cfg, 0.1, 0).unwrap();
        let balanced = sinkhorn_balanced(&p, &SolverConfig { max_iter: 50, ..cfg }).unwrap();
        assert_eq!(plan.values.as_slice().unwrap(), balanced.values.as_slice().unwrap());
        assert_eq!(stats.outer_iters, 0);
    }

    #[test]
    fn approaches_semi_relaxed_objective_on_small_instance() {
        let p = random_prob(6, 3, 13);
        let cfg = SolverConfig { epsilon: 0.05, gamma: 0.5, tol: 1e-9, max_iter: 20_000 };
        let nu = Array1::from_elem(3, 1.0 / 3.0);
        let reference = semi_relaxed_ot(&p, &cfg, &MarginalPair::uniform(6, 3)).unwrap();
        let ref_obj = srot_objective(&reference.values, &p, cfg.gamma, cfg.epsilon, &nu).unwrap();

        let (plan, _) = bilevel_baseline(&p, &cfg, 0.1, 400).unwrap();
        let obj = srot_objective(&plan.values, &p, cfg.gamma, cfg.epsilon, &nu).unwrap();
        assert!(
            (obj - ref_obj).abs() <= 1e-3 * (1.0 + ref_obj.abs()),
            "bilevel {obj} vs semi-relaxed {ref_obj}"
        );
    }

    #[test]
    fn oversized_step_is_rejected() {
        let p = random_prob(5, 3, 4);
        let cfg = SolverConfig { epsilon: 0.05, gamma: 0.5, ..Default::default() };
        let err = bilevel_baseline(&p, &cfg, 1e6, 50).unwrap_err();
        assert!(matches!(err, OtError::StepTooLarge { .. }));
    }
}
