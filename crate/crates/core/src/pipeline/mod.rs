//! Training loop, synthetic data generation, novel-class-count estimation
//! and the hyperparameter grid search.
//!
//! One step: sample a batch, draw two augmented views per scene, run
//! DBSCAN over the unlabeled points, forward both views, supervised CE on
//! known points, semi-relaxed OT plans at point and region level with
//! cross-view label exchange, one optimizer update, then the gamma
//! controllers observe the plan KLs.

mod estimate;
mod eval;
mod kmeans;
mod optim;
mod search;
mod step;
mod synthetic;

pub use estimate::estimate_novel_count;
pub use eval::{collapse_fraction, evaluate, novel_accuracy, predict_novel_assignments};
pub use kmeans::kmeans;
pub use optim::{cosine_lr, AdamW, ModelGrads};
pub use search::{hyperparam_search, SearchRow};
pub use step::{compute_step, BatchScene, StepOutputs};
pub use synthetic::{exact_counts, generate_synthetic, SyntheticSpec};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gamma::{cosine_anneal, step_decay, GammaError, GammaParams, GammaState};
use crate::metrics::MetricsError;
use crate::model::{augment_views, Model, ModelError, DEFAULT_WIDTHS};
use crate::ot::{OtError, SolverConfig};
use crate::region::RegionError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("dataset has no unlabeled novel points")]
    NoNovelPoints,
    #[error("dataset has no labeled known points")]
    NoKnownPoints,
    #[error("loss became non-finite at step {step}")]
    DivergedLoss { step: usize },
    #[error("invalid ratios: {0}")]
    InvalidRatios(String),
    #[error("candidate range ({known}, {max_classes}) is empty")]
    EmptyRange { known: usize, max_classes: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Gamma(#[from] GammaError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// A point cloud with per-point labels. Points with `known_mask = false`
/// belong to novel classes: their labels (when present) are used only for
/// evaluation, never during training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub points: Vec<[f64; 3]>,
    pub labels: Vec<Option<u32>>,
    pub known_mask: Vec<bool>,
}

impl Scene {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.labels.len() != self.points.len() || self.known_mask.len() != self.points.len() {
            return Err(PipelineError::InvalidConfig(format!(
                "scene fields disagree: {} points, {} labels, {} mask entries",
                self.points.len(),
                self.labels.len(),
                self.known_mask.len()
            )));
        }
        for (i, (&mask, label)) in self.known_mask.iter().zip(self.labels.iter()).enumerate() {
            if mask && label.is_none() {
                return Err(PipelineError::InvalidConfig(format!(
                    "point {i} is marked known but has no label"
                )));
            }
        }
        Ok(())
    }
}

/// How gamma evolves during training. `Adaptive` is the KL-plateau
/// controller; the rest are the ablation baselines.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaSchedule {
    Adaptive(GammaParams),
    Fixed { gamma: f64 },
    StepDecay { gamma0: f64, lambda: f64 },
    Cosine { gamma0: f64, gamma_min: f64 },
}

impl Default for GammaSchedule {
    fn default() -> Self {
        GammaSchedule::Adaptive(GammaParams::default())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub weight_decay: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub encoder_widths: Vec<usize>,
    /// Adds one per-point noise input channel, redrawn per view. Breaks
    /// the early symmetry of predictions without carrying cross-view
    /// signal (the label exchange cancels it out).
    pub noise_channel: bool,
    pub num_novel_classes: usize,
    pub point_solver: SolverConfig,
    pub region_solver: SolverConfig,
    pub gamma_point: GammaSchedule,
    pub gamma_region: GammaSchedule,
    pub dbscan_epsilon: f64,
    pub dbscan_min_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 4,
            lr_initial: 1e-3,
            lr_final: 1e-5,
            weight_decay: 1e-2,
            alpha: 1.0,
            beta: 1.0,
            tau: 0.1,
            encoder_widths: DEFAULT_WIDTHS.to_vec(),
            noise_channel: true,
            num_novel_classes: 4,
            point_solver: SolverConfig::default(),
            region_solver: SolverConfig::default(),
            gamma_point: GammaSchedule::default(),
            gamma_region: GammaSchedule::default(),
            dbscan_epsilon: 0.5,
            dbscan_min_samples: 2,
            seed: 0,
        }
    }
}

/// One history row per training step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub l_s: f64,
    pub l_u_p: f64,
    pub l_u_r: f64,
    pub total: f64,
    pub kl_point: Option<f64>,
    pub kl_region: Option<f64>,
    pub gamma_point: f64,
    pub gamma_region: f64,
    /// `total + gamma_point * kl_point` (point-level KL drives selection).
    pub indicator: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
}

impl TrainHistory {
    /// Mean indicator over the final epoch's steps.
    pub fn final_indicator(&self) -> f64 {
        let last_epoch = self.records.last().map(|r| r.epoch).unwrap_or(0);
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.epoch == last_epoch)
            .map(|r| r.indicator)
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }
}

enum GammaController {
    Adaptive(GammaState),
    Fixed(f64),
    StepDecay { gamma0: f64, lambda: f64 },
    Cosine { gamma0: f64, gamma_min: f64, t_max: usize },
}

impl GammaController {
    fn new(schedule: &GammaSchedule, total_steps: usize) -> Result<Self, PipelineError> {
        Ok(match schedule {
            GammaSchedule::Adaptive(params) => GammaController::Adaptive(GammaState::new(*params)?),
            GammaSchedule::Fixed { gamma } => GammaController::Fixed(*gamma),
            GammaSchedule::StepDecay { gamma0, lambda } => {
                GammaController::StepDecay { gamma0: *gamma0, lambda: *lambda }
            }
            GammaSchedule::Cosine { gamma0, gamma_min } => GammaController::Cosine {
                gamma0: *gamma0,
                gamma_min: *gamma_min,
                t_max: total_steps.max(1),
            },
        })
    }

    fn gamma(&self, epoch: usize, global_step: usize) -> f64 {
        match self {
            GammaController::Adaptive(state) => state.gamma(),
            GammaController::Fixed(g) => *g,
            GammaController::StepDecay { gamma0, lambda } => step_decay(*gamma0, *lambda, epoch),
            GammaController::Cosine { gamma0, gamma_min, t_max } => {
                cosine_anneal(*gamma0, *gamma_min, global_step.min(*t_max), *t_max)
                    .unwrap_or(*gamma_min)
            }
        }
    }

    fn observe(&mut self, kl: f64) -> Result<(), GammaError> {
        if let GammaController::Adaptive(state) = self {
            state.observe_kl(kl)?;
        }
        Ok(())
    }
}

/// Trains on the dataset and returns the model plus the full history.
pub fn train(dataset: &[Scene], cfg: &TrainConfig) -> Result<(Model, TrainHistory), PipelineError> {
    for scene in dataset {
        scene.validate()?;
    }
    let total_novel: usize = dataset
        .iter()
        .map(|s| s.known_mask.iter().filter(|m| !**m).count())
        .sum();
    if total_novel == 0 {
        return Err(PipelineError::NoNovelPoints);
    }
    let known_ids = known_class_ids(dataset)?;
    let num_known = known_ids.len();
    if cfg.num_novel_classes == 0 {
        return Err(PipelineError::InvalidConfig("num_novel_classes must be >= 1".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(PipelineError::InvalidConfig("epochs and batch_size must be >= 1".into()));
    }

    let steps_per_epoch = dataset.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut widths = cfg.encoder_widths.clone();
    if widths.len() < 2 {
        return Err(PipelineError::InvalidConfig("encoder needs >= 2 widths".into()));
    }
    widths[0] = 3 + usize::from(cfg.noise_channel);
    let mut model = Model::init(&widths, num_known, cfg.num_novel_classes, cfg.tau, &mut rng);
    let mut opt = AdamW::new(&model, cfg.weight_decay);
    let mut gamma_p = GammaController::new(&cfg.gamma_point, total_steps)?;
    let mut gamma_r = GammaController::new(&cfg.gamma_region, total_steps)?;
    let mut history = TrainHistory::default();

    let mut global_step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let lr = cosine_lr(cfg.lr_initial, cfg.lr_final, global_step, total_steps);
            let gp = gamma_p.gamma(epoch, global_step);
            let gr = gamma_r.gamma(epoch, global_step);

            let batch: Vec<BatchScene<'_>> = chunk
                .iter()
                .map(|&idx| {
                    let scene = &dataset[idx];
                    let (view1, view2) = augment_views(&scene.points, &mut rng);
                    let (noise1, noise2) = if cfg.noise_channel {
                        let n = scene.points.len();
                        (
                            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        )
                    } else {
                        (Vec::new(), Vec::new())
                    };
                    BatchScene { scene, view1, view2, noise1, noise2 }
                })
                .collect();

            let out = compute_step(&model, &batch, gp, gr, cfg)?;
            if !out.total.is_finite() {
                return Err(PipelineError::DivergedLoss { step: global_step });
            }
            opt.step(&mut model, &out.grads, lr);
            if let Some(kl) = out.kl_point {
                gamma_p.observe(kl)?;
            }
            if let Some(kl) = out.kl_region {
                gamma_r.observe(kl)?;
            }

            history.records.push(StepRecord {
                step: global_step,
                epoch,
                lr,
                l_s: out.l_s,
                l_u_p: out.l_u_p,
                l_u_r: out.l_u_r,
                total: out.total,
                kl_point: out.kl_point,
                kl_region: out.kl_region,
                gamma_point: gp,
                gamma_region: gr,
                indicator: crate::gamma::indicator(out.total, gp, out.kl_point.unwrap_or(0.0)),
            });
            global_step += 1;
        }
    }
    Ok((model, history))
}

/// Distinct labels of known-masked points; they must be contiguous ids
/// starting at 0 (they index prototype columns directly).
pub(crate) fn known_class_ids(dataset: &[Scene]) -> Result<Vec<usize>, PipelineError> {
    let mut ids: Vec<usize> = dataset
        .iter()
        .flat_map(|s| {
            s.labels
                .iter()
                .zip(s.known_mask.iter())
                .filter(|(_, m)| **m)
                .map(|(l, _)| l.expect("validated") as usize)
        })
        .collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.is_empty() {
        return Err(PipelineError::NoKnownPoints);
    }
    if *ids.last().unwrap() != ids.len() - 1 {
        return Err(PipelineError::InvalidConfig(format!(
            "known class ids must be contiguous from 0, got {ids:?}"
        )));
    }
    Ok(ids)
}

/// Deterministic augmentation helper for callers outside the loop (tests
/// and the exchange-contract checks): same seed, same views.
pub fn views_for_seed(scene: &Scene, seed: u64) -> (crate::model::SceneView, crate::model::SceneView) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    augment_views(&scene.points, &mut rng)
}

/// Derives a child seed; keeps seeding choices in one place.
pub fn derive_seed<R: Rng>(rng: &mut R) -> u64 {
    rng.gen()
}
