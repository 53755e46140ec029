//! Objective evaluation for the semi-relaxed problem:
//! `(1/M) <Q, -log P> + gamma * KL((1/M) Q^T 1, nu) - eps * H((1/M) Q)`.

use ndarray::{Array1, Array2, Axis};

use super::{OtError, ProbabilityMatrix};

/// `KL(p, q) = sum_i p_i log(p_i / q_i)` with `0 log 0 := 0`.
///
/// Nonnegative, zero iff `p == q`. Fails with `InvalidSupport` if `q` has a
/// zero where `p` is positive.
pub fn kl_div(p: &Array1<f64>, q: &Array1<f64>) -> Result<f64, OtError> {
    if p.len() != q.len() {
        return Err(OtError::ShapeMismatch {
            expected: format!("len {}", p.len()),
            got: format!("len {}", q.len()),
        });
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q.iter()).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(OtError::InvalidSupport { index: i });
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

/// Shannon entropy `H(R) = -sum R log R` with `0 log 0 := 0`.
pub fn entropy(r: &Array2<f64>) -> f64 {
    r.iter().map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 }).sum()
}

/// Evaluates the semi-relaxed objective of a plan `q` (rows summing to 1)
/// against predictions `p`, penalty weight `gamma`, entropic weight
/// `epsilon` and column prior `nu`.
pub fn srot_objective(
    q: &Array2<f64>,
    p: &ProbabilityMatrix,
    gamma: f64,
    epsilon: f64,
    nu: &Array1<f64>,
) -> Result<f64, OtError> {
    if q.dim() != p.values().dim() || nu.len() != q.ncols() {
        return Err(OtError::ShapeMismatch {
            expected: format!("plan {:?}, nu len {}", p.values().dim(), p.ncols()),
            got: format!("plan {:?}, nu len {}", q.dim(), nu.len()),
        });
    }
    let m = q.nrows() as f64;
    let mut transport = 0.0;
    for (qv, pv) in q.iter().zip(p.values().iter()) {
        if *qv != 0.0 {
            transport += qv * -pv.ln();
        }
    }
    transport /= m;

    let col_marginal = q.sum_axis(Axis(0)) / m;
    let kl = kl_div(&col_marginal, nu)?;

    let normalized = q / m;
    Ok(transport + gamma * kl - epsilon * entropy(&normalized))
}
