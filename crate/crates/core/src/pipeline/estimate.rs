//! Novel-class-count estimation: k-means over all features for each
//! candidate total class count, scored by Hungarian-matched accuracy of
//! the labeled known points; the best candidate minus the known count is
//! the estimate.

use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::metrics::assignment_value;

use super::PipelineError;

const KMEANS_RESTARTS: usize = 4;
const KMEANS_MAX_ITER: usize = 100;

/// Candidates range over the open interval `(n_known, max_classes)`; ties
/// in accuracy resolve toward the smaller candidate.
pub fn estimate_novel_count(
    features: &Array2<f64>,
    known_labels: &[Option<usize>],
    max_classes: usize,
    seed: u64,
) -> Result<usize, PipelineError> {
    if features.nrows() != known_labels.len() {
        return Err(PipelineError::InvalidConfig(format!(
            "{} feature rows vs {} labels",
            features.nrows(),
            known_labels.len()
        )));
    }
    let mut distinct: Vec<usize> = known_labels.iter().flatten().copied().collect();
    distinct.sort_unstable();
    distinct.dedup();
    let n_known = distinct.len();
    if n_known == 0 {
        return Err(PipelineError::NoKnownPoints);
    }
    if max_classes <= n_known + 1 {
        return Err(PipelineError::EmptyRange { known: n_known, max_classes });
    }

    let labeled: Vec<(usize, usize)> = known_labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|v| (i, distinct.binary_search(&v).unwrap())))
        .collect();

    let mut best_k = n_known + 1;
    let mut best_acc = f64::NEG_INFINITY;
    for k_all in (n_known + 1)..max_classes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k_all as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let assign = super::kmeans(features, k_all, KMEANS_RESTARTS, KMEANS_MAX_ITER, &mut rng);
        let acc = known_accuracy(&assign, &labeled, k_all, n_known)?;
        if acc > best_acc + 1e-12 {
            best_acc = acc;
            best_k = k_all;
        }
    }
    Ok(best_k - n_known)
}

/// Hungarian-matched accuracy of labeled points: clusters are optimally
/// assigned to known classes (square-padded count matrix) and the matched
/// count is divided by the number of labeled points.
fn known_accuracy(
    assignments: &[usize],
    labeled: &[(usize, usize)],
    n_clusters: usize,
    n_known: usize,
) -> Result<f64, PipelineError> {
    if labeled.is_empty() {
        return Ok(0.0);
    }
    let side = n_clusters.max(n_known);
    let mut counts = Array2::<f64>::zeros((side, side));
    for &(row, class) in labeled {
        counts[[assignments[row], class]] += 1.0;
    }
    let matched = assignment_value(&counts, true)?;
    Ok(matched / labeled.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn empty_range_rejected() {
        let features = Array2::<f64>::zeros((4, 2));
        let labels = vec![Some(0), Some(1), Some(2), None];
        assert!(matches!(
            estimate_novel_count(&features, &labels, 4, 0),
            Err(PipelineError::EmptyRange { known: 3, max_classes: 4 })
        ));
    }

    #[test]
    fn recovers_two_well_separated_novel_clusters() {
        // 3 known blobs near the origin region, 2 novel blobs far away.
        let centers = [
            [0.0, 0.0],
            [6.0, 0.0],
            [0.0, 6.0],
            [20.0, 20.0],
            [-20.0, 20.0],
        ];
        let mut hits = 0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 0.4).unwrap();
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for (c, center) in centers.iter().enumerate() {
                for _ in 0..60 {
                    rows.push([
                        center[0] + noise.sample(&mut rng),
                        center[1] + noise.sample(&mut rng),
                    ]);
                    labels.push(if c < 3 { Some(c) } else { None });
                }
            }
            let features =
                Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]);
            let novel = estimate_novel_count(&features, &labels, 10, seed.wrapping_add(1000))
                .unwrap();
            if novel == 2 {
                hits += 1;
            }
        }
        assert!(hits >= 9, "recovered 2 novel classes in {hits}/10 seeds");
    }

    #[test]
    fn accuracy_helper_counts_matches() {
        // Clusters 0/1 cleanly map to classes 1/0.
        let assignments = vec![0, 0, 1, 1];
        let labeled = vec![(0, 1), (1, 1), (2, 0), (3, 0)];
        let acc = known_accuracy(&assignments, &labeled, 2, 2).unwrap();
        assert_eq!(acc, 1.0);
    }
}
