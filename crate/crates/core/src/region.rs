//! Region generation over unlabeled points: exact DBSCAN with a grid-hash
//! neighbor index (cell size = epsilon), plus average pooling of point
//! features into region features.
//!
//! Determinism: points are seeded in ascending index order and neighbor
//! lists are sorted, so border points always join the first cluster that
//! reaches them.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use thiserror::Error;

pub const NOISE: i32 = -1;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("coordinate {index} is not finite")]
    NonFiniteCoordinate { index: usize },
    #[error("invalid dbscan parameters: {0}")]
    InvalidParams(String),
    #[error("feature rows {rows} do not match partition size {points}")]
    ShapeMismatch { rows: usize, points: usize },
}

/// DBSCAN output: region id per point (`NOISE` = -1 for outliers).
/// Non-noise ids are contiguous `0..region_count` and every region is
/// nonempty.
#[derive(Debug, Clone)]
pub struct RegionPartition {
    pub assignment: Vec<i32>,
    pub region_count: usize,
    pub epsilon: f64,
    pub min_samples: usize,
}

impl RegionPartition {
    /// Point indices grouped by region id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.region_count];
        for (idx, &r) in self.assignment.iter().enumerate() {
            if r >= 0 {
                groups[r as usize].push(idx);
            }
        }
        groups
    }

    pub fn noise_count(&self) -> usize {
        self.assignment.iter().filter(|&&r| r == NOISE).count()
    }
}

/// Standard DBSCAN over 3D points with Euclidean distance. A point is a
/// core point when at least `min_samples` points (itself included) lie
/// within `epsilon`. Empty input yields an empty partition.
pub fn dbscan(
    points: &[[f64; 3]],
    epsilon: f64,
    min_samples: usize,
) -> Result<RegionPartition, RegionError> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(RegionError::InvalidParams(format!("epsilon {epsilon}")));
    }
    if min_samples == 0 {
        return Err(RegionError::InvalidParams("min_samples must be >= 1".into()));
    }
    for (i, p) in points.iter().enumerate() {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(RegionError::NonFiniteCoordinate { index: i });
        }
    }

    const UNVISITED: i32 = -2;
    let n = points.len();
    let index = GridIndex::build(points, epsilon);
    let mut labels = vec![UNVISITED; n];
    let mut region_count = 0usize;

    for seed in 0..n {
        if labels[seed] != UNVISITED {
            continue;
        }
        let neighbors = index.neighbors(points, seed);
        if neighbors.len() < min_samples {
            labels[seed] = NOISE;
            continue;
        }
        let cluster = region_count as i32;
        region_count += 1;
        labels[seed] = cluster;
        let mut queue: std::collections::VecDeque<usize> =
            neighbors.into_iter().filter(|&j| j != seed).collect();
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                labels[j] = cluster; // border point adopted by first claimant
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            let j_neighbors = index.neighbors(points, j);
            if j_neighbors.len() >= min_samples {
                queue.extend(j_neighbors.into_iter().filter(|&k| labels[k] == UNVISITED || labels[k] == NOISE));
            }
        }
    }

    Ok(RegionPartition { assignment: labels, region_count, epsilon, min_samples })
}

/// Row `k` of the output is the mean of the feature rows assigned to
/// region `k`; noise points are excluded.
pub fn pool_region_features(
    features: &Array2<f64>,
    part: &RegionPartition,
) -> Result<Array2<f64>, RegionError> {
    if features.nrows() != part.assignment.len() {
        return Err(RegionError::ShapeMismatch {
            rows: features.nrows(),
            points: part.assignment.len(),
        });
    }
    let dim = features.ncols();
    let mut pooled = Array2::<f64>::zeros((part.region_count, dim));
    let mut counts = Array1::<f64>::zeros(part.region_count);
    for (idx, &r) in part.assignment.iter().enumerate() {
        if r < 0 {
            continue;
        }
        let r = r as usize;
        let row = features.row(idx);
        let mut target = pooled.row_mut(r);
        target += &row;
        counts[r] += 1.0;
    }
    for (mut row, &c) in pooled.rows_mut().into_iter().zip(counts.iter()) {
        row.mapv_inplace(|v| v / c);
    }
    Ok(pooled)
}

/// Fraction of points marked as noise; drives the epsilon sweep that keeps
/// ~95% of the cloud inside regions.
pub fn outlier_fraction(part: &RegionPartition) -> f64 {
    if part.assignment.is_empty() {
        return 0.0;
    }
    part.noise_count() as f64 / part.assignment.len() as f64
}

/// Exact neighbor search: hash points into cells of side `epsilon`, then a
/// query only inspects the 27 surrounding cells.
struct GridIndex {
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
    epsilon: f64,
}

impl GridIndex {
    fn build(points: &[[f64; 3]], epsilon: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, epsilon)).or_default().push(i);
        }
        Self { cells, epsilon }
    }

    fn key(p: &[f64; 3], epsilon: f64) -> (i64, i64, i64) {
        (
            (p[0] / epsilon).floor() as i64,
            (p[1] / epsilon).floor() as i64,
            (p[2] / epsilon).floor() as i64,
        )
    }

    /// Indices within `epsilon` of point `i` (inclusive, self included),
    /// sorted ascending.
    fn neighbors(&self, points: &[[f64; 3]], i: usize) -> Vec<usize> {
        let p = points[i];
        let (cx, cy, cz) = Self::key(&p, self.epsilon);
        let eps2 = self.epsilon * self.epsilon;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in bucket {
                            let q = points[j];
                            let d2 = (p[0] - q[0]).powi(2)
                                + (p[1] - q[1]).powi(2)
                                + (p[2] - q[2]).powi(2);
                            if d2 <= eps2 {
                                out.push(j);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_close_points_form_one_region() {
        let pts = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]];
        let part = dbscan(&pts, 0.5, 2).unwrap();
        assert_eq!(part.region_count, 1);
        assert_eq!(part.assignment, vec![0, 0]);
    }

    #[test]
    fn isolated_point_is_noise() {
        let pts = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [10.0, 0.0, 0.0]];
        let part = dbscan(&pts, 0.5, 2).unwrap();
        assert_eq!(part.assignment, vec![0, 0, NOISE]);
    }

    #[test]
    fn empty_input_gives_empty_partition() {
        let part = dbscan(&[], 0.5, 2).unwrap();
        assert_eq!(part.region_count, 0);
        assert!(part.assignment.is_empty());
        assert_eq!(outlier_fraction(&part), 0.0);
    }

    #[test]
    fn non_finite_coordinate_rejected() {
        let pts = [[0.0, f64::NAN, 0.0]];
        assert!(matches!(
            dbscan(&pts, 0.5, 2),
            Err(RegionError::NonFiniteCoordinate { index: 0 })
        ));
    }

    /// Naive O(n^2) reference: core points are found by full pairwise
    /// scan, clusters are connected components of the core-core graph.
    fn naive_core_components(
        points: &[[f64; 3]],
        epsilon: f64,
        min_samples: usize,
    ) -> (Vec<bool>, Vec<usize>) {
        let n = points.len();
        let eps2 = epsilon * epsilon;
        let d2 = |a: &[f64; 3], b: &[f64; 3]| {
            (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
        };
        let mut core = vec![false; n];
        for i in 0..n {
            let cnt = (0..n).filter(|&j| d2(&points[i], &points[j]) <= eps2).count();
            core[i] = cnt >= min_samples;
        }
        // Union-find over core points.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            if parent[i] != i {
                let root = find(parent, parent[i]);
                parent[i] = root;
            }
            parent[i]
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if core[i] && core[j] && d2(&points[i], &points[j]) <= eps2 {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
        let roots = (0..n).map(|i| find(&mut parent, i)).collect();
        (core, roots)
    }

    #[test]
    fn matches_naive_reference_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let points: Vec<[f64; 3]> = (0..200)
            .map(|_| {
                [
                    rng.gen_range(0.0..5.0),
                    rng.gen_range(0.0..5.0),
                    rng.gen_range(0.0..5.0),
                ]
            })
            .collect();
        let part = dbscan(&points, 0.5, 2).unwrap();
        let (core, roots) = naive_core_components(&points, 0.5, 2);

        // Same core/noise status and same component structure over cores.
        for i in 0..points.len() {
            for j in 0..points.len() {
                if core[i] && core[j] {
                    let same_ref = roots[i] == roots[j];
                    let same_ours = part.assignment[i] == part.assignment[j];
                    assert_eq!(same_ref, same_ours, "core pair ({i},{j})");
                }
            }
            if !core[i] {
                // Non-core points are noise or border; never a lone region.
                if part.assignment[i] >= 0 {
                    let members = part.members();
                    assert!(members[part.assignment[i] as usize].len() >= 2);
                }
            }
        }
    }

    #[test]
    fn min_samples_two_regions_have_at_least_two_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<[f64; 3]> = (0..150)
            .map(|_| {
                [
                    rng.gen_range(0.0..4.0),
                    rng.gen_range(0.0..4.0),
                    rng.gen_range(0.0..4.0),
                ]
            })
            .collect();
        let part = dbscan(&points, 0.4, 2).unwrap();
        for (r, members) in part.members().iter().enumerate() {
            assert!(members.len() >= 2, "region {r} has {} members", members.len());
        }
    }

    #[test]
    fn pooling_analytic_cases() {
        let part = RegionPartition {
            assignment: vec![0, 0],
            region_count: 1,
            epsilon: 0.5,
            min_samples: 2,
        };
        let feats = array![[0.0, 2.0], [2.0, 0.0]];
        let pooled = pool_region_features(&feats, &part).unwrap();
        assert_eq!(pooled, array![[1.0, 1.0]]);

        // Identical rows pool to themselves; noise is excluded.
        let part = RegionPartition {
            assignment: vec![0, NOISE, 0],
            region_count: 1,
            epsilon: 0.5,
            min_samples: 2,
        };
        let feats = array![[3.0, -1.0], [100.0, 100.0], [3.0, -1.0]];
        let pooled = pool_region_features(&feats, &part).unwrap();
        assert_eq!(pooled, array![[3.0, -1.0]]);
    }

    #[test]
    fn pooled_rows_stay_within_member_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let points: Vec<[f64; 3]> = (0..120)
            .map(|_| {
                [
                    rng.gen_range(0.0..3.0),
                    rng.gen_range(0.0..3.0),
                    rng.gen_range(0.0..3.0),
                ]
            })
            .collect();
        let part = dbscan(&points, 0.6, 2).unwrap();
        let feats = Array2::from_shape_fn((120, 4), |_| rng.gen_range(-5.0..5.0));
        let pooled = pool_region_features(&feats, &part).unwrap();
        for (r, members) in part.members().iter().enumerate() {
            for d in 0..4 {
                let vals: Vec<f64> = members.iter().map(|&i| feats[[i, d]]).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(pooled[[r, d]] >= lo - 1e-12 && pooled[[r, d]] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let part = dbscan(&[[0.0; 3], [0.1, 0.0, 0.0]], 0.5, 2).unwrap();
        let feats = Array2::<f64>::zeros((3, 2));
        assert!(matches!(
            pool_region_features(&feats, &part),
            Err(RegionError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn outlier_fraction_extremes_and_sweep() {
        let dense = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]];
        assert_eq!(outlier_fraction(&dbscan(&dense, 0.5, 2).unwrap()), 0.0);
        let sparse = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
        assert_eq!(outlier_fraction(&dbscan(&sparse, 0.5, 2).unwrap()), 1.0);

        // Epsilon sweep on a blob-plus-scatter scene: fraction never rises.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut points = Vec::new();
        for _ in 0..150 {
            points.push([
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ]);
        }
        for _ in 0..50 {
            points.push([
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
            ]);
        }
        let mut last = f64::INFINITY;
        for eps in [0.1, 0.3, 0.5, 0.7, 1.0] {
            let frac = outlier_fraction(&dbscan(&points, eps, 2).unwrap());
            assert!(frac <= last + 1e-12, "eps {eps}: {frac} > {last}");
            last = frac;
        }
    }

    #[test]
    fn scaling_points_and_epsilon_together_preserves_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let points: Vec<[f64; 3]> = (0..100)
            .map(|_| {
                [
                    rng.gen_range(0.0..3.0),
                    rng.gen_range(0.0..3.0),
                    rng.gen_range(0.0..3.0),
                ]
            })
            .collect();
        let base = dbscan(&points, 0.5, 2).unwrap();
        // Power-of-two factor keeps scaled distances exact in binary fp.
        let scaled: Vec<[f64; 3]> =
            points.iter().map(|p| [p[0] * 4.0, p[1] * 4.0, p[2] * 4.0]).collect();
        let part = dbscan(&scaled, 2.0, 2).unwrap();
        assert_eq!(base.assignment, part.assignment);
    }

    #[test]
    fn pool_partition_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let points: Vec<[f64; 3]> = (0..60)
            .map(|_| {
                [
                    rng.gen_range(0.0..2.0),
                    rng.gen_range(0.0..2.0),
                    rng.gen_range(0.0..2.0),
                ]
            })
            .collect();
        let feats = Array2::from_shape_fn((60, 3), |_| rng.gen_range(-1.0..1.0));
        let part = dbscan(&points, 0.5, 2).unwrap();
        let pooled = pool_region_features(&feats, &part).unwrap();

        // Reverse the point order: region ids change, but the multiset of
        // pooled rows (up to reordering) must be identical.
        let rev_points: Vec<[f64; 3]> = points.iter().rev().cloned().collect();
        let mut rev_feats = feats.clone();
        rev_feats.invert_axis(ndarray::Axis(0));
        let rev_part = dbscan(&rev_points, 0.5, 2).unwrap();
        let rev_pooled = pool_region_features(&rev_feats, &rev_part).unwrap();

        assert_eq!(pooled.nrows(), rev_pooled.nrows());
        let mut matched = vec![false; rev_pooled.nrows()];
        'outer: for row in pooled.rows() {
            for (k, cand) in rev_pooled.rows().into_iter().enumerate() {
                if !matched[k]
                    && row.iter().zip(cand.iter()).all(|(a, b)| (a - b).abs() < 1e-9)
                {
                    matched[k] = true;
                    continue 'outer;
                }
            }
            panic!("pooled row without a match after permutation");
        }
    }
}
