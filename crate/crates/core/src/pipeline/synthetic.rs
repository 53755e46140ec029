//! Synthetic imbalanced scenes: Gaussian blobs at well-separated class
//! centers shared across scenes, so a coordinate-based encoder can learn
//! consistent classes. The first `known_classes` class ids are labeled;
//! the rest are the novel classes whose labels stay hidden from training.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{PipelineError, Scene};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    /// The first `known_classes` class ids are labeled known classes.
    pub known_classes: usize,
    /// Per-class point fractions over all classes; must sum to 1.
    pub ratios: Vec<f64>,
    pub points_per_scene: usize,
    pub n_scenes: usize,
    /// Std-dev of each class blob.
    pub cluster_std: f64,
    /// Class centers are sampled uniformly in `[-center_box, center_box]^3`.
    pub center_box: f64,
    /// Minimum pairwise center separation (rejection sampling).
    pub min_center_sep: f64,
    /// Extra isotropic jitter added to every point.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 8,
            known_classes: 4,
            ratios: vec![0.125; 8],
            points_per_scene: 1500,
            n_scenes: 12,
            cluster_std: 0.35,
            center_box: 4.0,
            min_center_sep: 2.5,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// The 70/20/8/2 imbalanced mixture: 4 known classes sharing half the
    /// points uniformly, 4 novel classes splitting the other half in
    /// ratios 0.7 / 0.2 / 0.08 / 0.02.
    pub fn imbalanced_mixture(seed: u64) -> Self {
        Self {
            n_classes: 8,
            known_classes: 4,
            ratios: vec![0.125, 0.125, 0.125, 0.125, 0.35, 0.10, 0.04, 0.01],
            seed,
            ..Self::default()
        }
    }

    pub fn novel_classes(&self) -> usize {
        self.n_classes - self.known_classes
    }
}

/// Rounding-exact per-class counts by largest remainder: fractional parts
/// break ties toward the lower class id.
pub fn exact_counts(ratios: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = ratios.iter().map(|r| (r * total as f64).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ratios[a] * total as f64 - (ratios[a] * total as f64).floor();
        let fb = ratios[b] * total as f64 - (ratios[b] * total as f64).floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..(total - assigned) {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Scene>, PipelineError> {
    if spec.ratios.len() != spec.n_classes {
        return Err(PipelineError::InvalidRatios(format!(
            "{} ratios for {} classes",
            spec.ratios.len(),
            spec.n_classes
        )));
    }
    if spec.ratios.iter().any(|r| *r < 0.0 || !r.is_finite()) {
        return Err(PipelineError::InvalidRatios("negative or non-finite ratio".into()));
    }
    let sum: f64 = spec.ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(PipelineError::InvalidRatios(format!("ratios sum to {sum}")));
    }
    if spec.known_classes > spec.n_classes {
        return Err(PipelineError::InvalidRatios(format!(
            "{} known classes exceed {} total",
            spec.known_classes, spec.n_classes
        )));
    }
    if spec.points_per_scene == 0 || spec.n_scenes == 0 {
        return Err(PipelineError::InvalidRatios("counts must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = place_centers(spec, &mut rng)?;
    let counts = exact_counts(&spec.ratios, spec.points_per_scene);
    let blob = Normal::new(0.0, spec.cluster_std).unwrap();
    let jitter = if spec.noise_std > 0.0 {
        Some(Normal::new(0.0, spec.noise_std).unwrap())
    } else {
        None
    };

    let mut scenes = Vec::with_capacity(spec.n_scenes);
    for _ in 0..spec.n_scenes {
        let mut points = Vec::with_capacity(spec.points_per_scene);
        let mut labels = Vec::with_capacity(spec.points_per_scene);
        let mut known_mask = Vec::with_capacity(spec.points_per_scene);
        for (class, &count) in counts.iter().enumerate() {
            for _ in 0..count {
                let mut p = [
                    centers[class][0] + blob.sample(&mut rng),
                    centers[class][1] + blob.sample(&mut rng),
                    centers[class][2] + blob.sample(&mut rng),
                ];
                if let Some(j) = &jitter {
                    for v in p.iter_mut() {
                        *v += j.sample(&mut rng);
                    }
                }
                points.push(p);
                labels.push(Some(class as u32));
                known_mask.push(class < spec.known_classes);
            }
        }
        scenes.push(Scene { points, labels, known_mask });
    }
    Ok(scenes)
}

fn place_centers(
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f64; 3]>, PipelineError> {
    let mut centers: Vec<[f64; 3]> = Vec::with_capacity(spec.n_classes);
    let mut attempts = 0;
    while centers.len() < spec.n_classes {
        let c = [
            rng.gen_range(-spec.center_box..spec.center_box),
            rng.gen_range(-spec.center_box..spec.center_box),
            rng.gen_range(-spec.center_box..spec.center_box),
        ];
        let ok = centers.iter().all(|o| {
            let d2 = (c[0] - o[0]).powi(2) + (c[1] - o[1]).powi(2) + (c[2] - o[2]).powi(2);
            d2 >= spec.min_center_sep * spec.min_center_sep
        });
        if ok {
            centers.push(c);
        }
        attempts += 1;
        if attempts > 100_000 {
            return Err(PipelineError::InvalidRatios(format!(
                "cannot place {} centers with separation {} in box {}",
                spec.n_classes, spec.min_center_sep, spec.center_box
            )));
        }
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_ratios_split_evenly() {
        let counts = exact_counts(&[0.25; 4], 1000);
        assert_eq!(counts, vec![250, 250, 250, 250]);
    }

    #[test]
    fn imbalanced_ratios_are_rounding_exact() {
        let counts = exact_counts(&[0.7, 0.2, 0.08, 0.02], 1000);
        assert_eq!(counts, vec![700, 200, 80, 20]);
        assert_eq!(exact_counts(&[0.5, 0.5], 3), vec![2, 1]);
    }

    #[test]
    fn same_seed_gives_bit_identical_scenes() {
        let spec = SyntheticSpec {
            n_classes: 4,
            known_classes: 2,
            ratios: vec![0.4, 0.3, 0.2, 0.1],
            points_per_scene: 200,
            n_scenes: 3,
            seed: 7,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.len(), b.len());
        for (s, t) in a.iter().zip(b.iter()) {
            assert_eq!(s.points, t.points);
            assert_eq!(s.labels, t.labels);
            assert_eq!(s.known_mask, t.known_mask);
        }
    }

    #[test]
    fn bad_ratios_rejected() {
        let spec = SyntheticSpec {
            n_classes: 2,
            known_classes: 1,
            ratios: vec![0.7, 0.7],
            ..Default::default()
        };
        assert!(matches!(
            generate_synthetic(&spec),
            Err(PipelineError::InvalidRatios(_))
        ));
    }

    #[test]
    fn masks_follow_known_classes() {
        let spec = SyntheticSpec {
            n_classes: 3,
            known_classes: 1,
            ratios: vec![0.5, 0.3, 0.2],
            points_per_scene: 100,
            n_scenes: 1,
            seed: 3,
            ..Default::default()
        };
        let scenes = generate_synthetic(&spec).unwrap();
        for (label, mask) in scenes[0].labels.iter().zip(scenes[0].known_mask.iter()) {
            assert_eq!(*mask, label.unwrap() == 0);
        }
        assert_eq!(scenes[0].known_mask.iter().filter(|m| **m).count(), 50);
    }
}
