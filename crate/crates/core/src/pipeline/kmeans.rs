//! Seeded Lloyd's k-means with k-means++ initialization and a few
//! restarts, used by the novel-class-count estimator.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Returns per-row cluster assignments in `0..k`. Deterministic given the
/// RNG state; the best of `restarts` runs by inertia wins.
pub fn kmeans(data: &Array2<f64>, k: usize, restarts: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    assert!(k >= 1 && data.nrows() >= 1);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let (inertia, assign) = run_once(data, k, max_iter, rng);
        let better = match &best {
            None => true,
            Some((b, _)) => inertia < *b - 1e-12,
        };
        if better {
            best = Some((inertia, assign));
        }
    }
    best.unwrap().1
}

fn run_once(data: &Array2<f64>, k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<usize>) {
    let n = data.nrows();
    let d = data.ncols();
    let mut centers = plus_plus_init(data, k, rng);
    let mut assign = vec![0usize; n];

    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let row = data.row(i);
            let mut best_c = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.axis_iter(Axis(0)).enumerate() {
                let dist: f64 = row
                    .iter()
                    .zip(center.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist < best_d {
                    best_d = dist;
                    best_c = c;
                }
            }
            if assign[i] != best_c {
                assign[i] = best_c;
                changed = true;
            }
        }

        let mut counts = vec![0usize; k];
        let mut sums = Array2::<f64>::zeros((k, d));
        for i in 0..n {
            counts[assign[i]] += 1;
            let mut row = sums.row_mut(assign[i]);
            row += &data.row(i);
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the point farthest from its
                // current center (deterministic: max distance, lowest index).
                let (mut far_i, mut far_d) = (0usize, -1.0);
                for i in 0..n {
                    let ci = assign[i];
                    let dist: f64 = data
                        .row(i)
                        .iter()
                        .zip(centers.row(ci).iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if dist > far_d {
                        far_d = dist;
                        far_i = i;
                    }
                }
                centers.row_mut(c).assign(&data.row(far_i));
                changed = true;
            } else {
                let mut row = centers.row_mut(c);
                row.assign(&sums.row(c));
                row.mapv_inplace(|v| v / counts[c] as f64);
            }
        }
        if !changed {
            break;
        }
    }

    let mut inertia = 0.0;
    for i in 0..n {
        inertia += data
            .row(i)
            .iter()
            .zip(centers.row(assign[i]).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    (inertia, assign)
}

fn plus_plus_init(data: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = data.nrows();
    let d = data.ncols();
    let mut centers = Array2::<f64>::zeros((k, d));
    let first = rng.gen_range(0..n);
    centers.row_mut(0).assign(&data.row(first));

    let mut min_d2 = vec![f64::INFINITY; n];
    for c in 1..k {
        for i in 0..n {
            let dist: f64 = data
                .row(i)
                .iter()
                .zip(centers.row(c - 1).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            min_d2[i] = min_d2[i].min(dist);
        }
        let total: f64 = min_d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centers.row_mut(c).assign(&data.row(next));
    }
    centers
}
