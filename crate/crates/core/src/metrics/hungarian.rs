//! Optimal assignment on a square score matrix (Jonker-Volgenant style
//! shortest augmenting paths, O(n^3)), with ties broken toward the
//! lexicographically smallest permutation for reproducible reports.

use ndarray::Array2;

use super::MetricsError;

/// Returns the permutation `perm[row] = col` maximizing (or minimizing)
/// the total score. Ties are resolved to the lexicographically smallest
/// optimal permutation.
pub fn hungarian_match(score: &Array2<f64>, maximize: bool) -> Result<Vec<usize>, MetricsError> {
    if score.nrows() != score.ncols() {
        return Err(MetricsError::NotSquare { rows: score.nrows(), cols: score.ncols() });
    }
    if score.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    let n = score.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let cost = if maximize { score.mapv(|v| -v) } else { score.clone() };
    let all: Vec<usize> = (0..n).collect();
    let best = assignment_cost(&cost, &all, &all);
    let scale: f64 = cost.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-9 * (1.0 + scale * n as f64);

    // Fix rows one at a time to the smallest column that still admits an
    // optimal completion.
    let mut perm = vec![0usize; n];
    let mut free: Vec<usize> = (0..n).collect();
    let mut prefix_cost = 0.0;
    for row in 0..n {
        let mut chosen = None;
        for (slot, &col) in free.iter().enumerate() {
            let remaining: Vec<usize> =
                free.iter().enumerate().filter(|&(s, _)| s != slot).map(|(_, &c)| c).collect();
            let tail = if remaining.is_empty() {
                0.0
            } else {
                assignment_cost(&cost, &((row + 1)..n).collect::<Vec<_>>(), &remaining)
            };
            if prefix_cost + cost[[row, col]] + tail <= best + tol {
                chosen = Some((slot, col));
                break;
            }
        }
        let (slot, col) = chosen.expect("optimal completion must exist");
        perm[row] = col;
        prefix_cost += cost[[row, col]];
        free.remove(slot);
    }
    Ok(perm)
}

/// Minimum assignment cost over the given row and column subsets (equal
/// sizes).
fn assignment_cost(cost: &Array2<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    debug_assert_eq!(rows.len(), cols.len());
    let n = rows.len();
    if n == 0 {
        return 0.0;
    }
    solve_min(&Array2::from_shape_fn((n, n), |(i, j)| cost[[rows[i], cols[j]]]))
}

/// O(n^3) min-cost assignment via potentials and shortest augmenting
/// paths; returns the optimal total cost.
fn solve_min(cost: &Array2<f64>) -> f64 {
    let n = cost.nrows();
    // 1-indexed potentials; p[j] = row matched to column j (0 = none).
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut total = 0.0;
    for j in 1..=n {
        if p[j] != 0 {
            total += cost[[p[j] - 1, j - 1]];
        }
    }
    total
}

/// Value-only fast path (no lexicographic refinement): the best total
/// score achievable by any assignment. Used where only the score matters,
/// e.g. matched-accuracy computations over many candidate clusterings.
pub fn assignment_value(score: &Array2<f64>, maximize: bool) -> Result<f64, MetricsError> {
    if score.nrows() != score.ncols() {
        return Err(MetricsError::NotSquare { rows: score.nrows(), cols: score.ncols() });
    }
    if score.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    if score.nrows() == 0 {
        return Ok(0.0);
    }
    let cost = if maximize { score.mapv(|v| -v) } else { score.clone() };
    let v = solve_min(&cost);
    Ok(if maximize { -v } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_force(score: &Array2<f64>, maximize: bool) -> (Vec<usize>, f64) {
        let n = score.nrows();
        let mut best_perm = Vec::new();
        let mut best = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
        let mut perm: Vec<usize> = (0..n).collect();
        permute(&mut perm, 0, &mut |p| {
            let total: f64 = p.iter().enumerate().map(|(i, &j)| score[[i, j]]).sum();
            let better = if maximize { total > best + 1e-12 } else { total < best - 1e-12 };
            let tie_better = (total - best).abs() <= 1e-12 && p < &best_perm[..];
            if better || (tie_better && !best_perm.is_empty()) {
                best = total;
                best_perm = p.to_vec();
            }
        });
        (best_perm, best)
    }

    fn permute(items: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            f(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, f);
            items.swap(k, i);
        }
    }

    #[test]
    fn identity_dominant_matrix_gives_identity() {
        let score = array![[10.0, 1.0, 1.0], [1.0, 10.0, 1.0], [1.0, 1.0, 10.0]];
        assert_eq!(hungarian_match(&score, true).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn matches_brute_force_on_seeded_matrices() {
        for seed in 0..40u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..=6);
            let score = Array2::from_shape_fn((n, n), |_| rng.gen_range(-5.0..5.0));
            for maximize in [true, false] {
                let perm = hungarian_match(&score, maximize).unwrap();
                let total: f64 = perm.iter().enumerate().map(|(i, &j)| score[[i, j]]).sum();
                let (_, best) = brute_force(&score, maximize);
                assert!(
                    (total - best).abs() <= 1e-9,
                    "seed {seed} maximize {maximize}: {total} vs {best}"
                );
            }
        }
    }

    #[test]
    fn ties_break_lexicographically_smallest() {
        // All entries equal: every permutation is optimal.
        let score = Array2::from_elem((4, 4), 1.0);
        assert_eq!(hungarian_match(&score, true).unwrap(), vec![0, 1, 2, 3]);

        // Two optimal assignments; (0->0, 1->1) is lex-smaller.
        let score = array![[2.0, 1.0], [1.0, 2.0]];
        assert_eq!(hungarian_match(&score, true).unwrap(), vec![0, 1]);
        let score = array![[1.0, 2.0], [2.0, 1.0]];
        assert_eq!(hungarian_match(&score, true).unwrap(), vec![1, 0]);
    }

    #[test]
    fn invariant_under_constant_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let score = Array2::from_shape_fn((5, 5), |_| rng.gen_range(0.0..3.0));
        let base = hungarian_match(&score, true).unwrap();
        let shifted = hungarian_match(&score.mapv(|v| v + 17.5), true).unwrap();
        assert_eq!(base, shifted);
    }

    #[test]
    fn rejects_non_square_and_non_finite() {
        let score = Array2::<f64>::zeros((2, 3));
        assert!(matches!(
            hungarian_match(&score, true),
            Err(MetricsError::NotSquare { .. })
        ));
        let score = array![[f64::NAN]];
        assert!(matches!(
            hungarian_match(&score, true),
            Err(MetricsError::NonFiniteScore)
        ));
    }

    #[test]
    fn assignment_value_agrees_with_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..10 {
            let n = rng.gen_range(2..=6);
            let score = Array2::from_shape_fn((n, n), |_| rng.gen_range(-2.0..2.0));
            let perm = hungarian_match(&score, true).unwrap();
            let total: f64 = perm.iter().enumerate().map(|(i, &j)| score[[i, j]]).sum();
            let value = assignment_value(&score, true).unwrap();
            assert!((total - value).abs() <= 1e-9);
        }
    }
}
