//! One training step over a batch of two-view scenes: supervised CE on
//! labeled points, semi-relaxed OT pseudo-labels at point and region
//! level, cross-view label exchange, and the full gradient assembly.
//!
//! Plans are constants in the backward pass: the plan from view 1
//! supervises the probabilities of view 2 and vice versa.

use ndarray::{s, Array1, Array2, Axis};
use rayon::prelude::*;

use crate::model::{
    classifier_backward, classify_columns, ClassifierCache, ForwardCache, Model, SceneView,
};
use crate::ot::{semi_relaxed_ot, kl_div, MarginalPair, ProbabilityMatrix, SolverConfig, TransportPlan};
use crate::region::{dbscan, pool_region_features, RegionPartition};

use super::optim::ModelGrads;
use super::{PipelineError, Scene, TrainConfig};

/// A batch entry: the source scene plus its two augmented views. The
/// noise vectors (one value per point, redrawn per view) fill the extra
/// encoder input channel; leave them empty when the channel is off.
pub struct BatchScene<'a> {
    pub scene: &'a Scene,
    pub view1: SceneView,
    pub view2: SceneView,
    pub noise1: Vec<f64>,
    pub noise2: Vec<f64>,
}

impl BatchScene<'_> {
    /// Encoder input for one view: coordinates plus the optional noise
    /// column.
    pub fn encoder_input(&self, view: usize) -> Array2<f64> {
        let (v, noise) = if view == 0 {
            (&self.view1, &self.noise1)
        } else {
            (&self.view2, &self.noise2)
        };
        let n = v.points.len();
        let extra = usize::from(!noise.is_empty());
        let mut input = Array2::zeros((n, 3 + extra));
        for (i, p) in v.points.iter().enumerate() {
            input[[i, 0]] = p[0];
            input[[i, 1]] = p[1];
            input[[i, 2]] = p[2];
            if extra == 1 {
                input[[i, 3]] = noise[i];
            }
        }
        input
    }
}

/// Losses, plan KLs and gradients of one step.
pub struct StepOutputs {
    pub l_s: f64,
    pub l_u_p: f64,
    pub l_u_r: f64,
    pub total: f64,
    pub kl_point: Option<f64>,
    pub kl_region: Option<f64>,
    pub grads: ModelGrads,
    pub point_plans: [Option<TransportPlan>; 2],
}

struct SceneForward {
    caches: [ForwardCache; 2],
    labeled_idx: Vec<usize>,
    labels: Vec<usize>,
    unlabeled_idx: Vec<usize>,
    /// Supervised classifier caches per view (known columns).
    sup_caches: [Option<ClassifierCache>; 2],
    /// Point-level novel-column caches per view.
    point_caches: [Option<ClassifierCache>; 2],
    /// Region-level novel-column caches per view.
    region_caches: [Option<ClassifierCache>; 2],
    partition: Option<RegionPartition>,
}

/// Computes losses and gradients for one batch at the given gamma values.
/// Regions come from DBSCAN on view-1 coordinates of the unlabeled points
/// and index both views' features.
pub fn compute_step(
    model: &Model,
    batch: &[BatchScene<'_>],
    gamma_point: f64,
    gamma_region: f64,
    cfg: &TrainConfig,
) -> Result<StepOutputs, PipelineError> {
    // Per-scene forward passes (parallel; order restored by collect).
    let forwards: Vec<Result<SceneForward, PipelineError>> = batch
        .par_iter()
        .map(|entry| forward_scene(model, entry, cfg))
        .collect();
    let mut forwards: Vec<SceneForward> = forwards.into_iter().collect::<Result<_, _>>()?;

    // Supervised loss over labeled points of both views.
    let total_labeled: usize = forwards.iter().map(|f| 2 * f.labeled_idx.len()).sum();
    let mut l_s = 0.0;
    if total_labeled > 0 {
        for f in &forwards {
            for v in 0..2 {
                if let Some(cache) = &f.sup_caches[v] {
                    for (row, &label) in cache.probs.rows().into_iter().zip(f.labels.iter()) {
                        l_s += -row[label].max(f64::MIN_POSITIVE).ln();
                    }
                }
            }
        }
        l_s /= total_labeled as f64;
    }

    // Stack point-level predictions across the batch per view and solve.
    let n_novel = model.num_novel;
    let point_counts: Vec<usize> = forwards.iter().map(|f| f.unlabeled_idx.len()).collect();
    let m_points: usize = point_counts.iter().sum();
    let mut l_u_p = 0.0;
    let mut kl_point = None;
    let mut point_plans: [Option<TransportPlan>; 2] = [None, None];
    if m_points > 0 {
        let stacked: [Array2<f64>; 2] = [
            stack_probs(&forwards, m_points, n_novel, |f| &f.point_caches[0]),
            stack_probs(&forwards, m_points, n_novel, |f| &f.point_caches[1]),
        ];
        let (plans, kl) = solve_level(&stacked, gamma_point, &cfg.point_solver)?;
        l_u_p = cross_entropy_exchange(&plans, &stacked);
        kl_point = Some(kl);
        point_plans = [Some(plans[0].clone()), Some(plans[1].clone())];
    }

    // Region level: pooled features, same partition for both views.
    let region_counts: Vec<usize> =
        forwards.iter().map(|f| f.partition.as_ref().map_or(0, |p| p.region_count)).collect();
    let k_regions: usize = region_counts.iter().sum();
    let mut l_u_r = 0.0;
    let mut kl_region = None;
    let mut region_plans: [Option<TransportPlan>; 2] = [None, None];
    if k_regions > 0 {
        let stacked: [Array2<f64>; 2] = [
            stack_probs(&forwards, k_regions, n_novel, |f| &f.region_caches[0]),
            stack_probs(&forwards, k_regions, n_novel, |f| &f.region_caches[1]),
        ];
        let (plans, kl) = solve_level(&stacked, gamma_region, &cfg.region_solver)?;
        l_u_r = cross_entropy_exchange(&plans, &stacked);
        kl_region = Some(kl);
        region_plans = [Some(plans[0].clone()), Some(plans[1].clone())];
    }

    let total = crate::model::total_loss(l_s, l_u_p, l_u_r, cfg.alpha, cfg.beta);

    // Backward: per-scene accumulation into shared gradients.
    let mut grads = ModelGrads::zeros_like(model);
    let mut point_offset = 0;
    let mut region_offset = 0;
    for f in forwards.iter_mut() {
        let n_pts = f.unlabeled_idx.len();
        let n_reg = f.partition.as_ref().map_or(0, |p| p.region_count);
        for v in 0..2 {
            let other = 1 - v;
            let n_all = f.caches[v].activations[0].nrows();
            let dim = model.bank.dim();
            let mut dfeatures = Array2::<f64>::zeros((n_all, dim));

            if let Some(cache) = &f.sup_caches[v] {
                // d l_s / d logits = (P - onehot) / total_labeled.
                let mut dlogits = cache.probs.clone();
                for (mut row, &label) in dlogits.rows_mut().into_iter().zip(f.labels.iter()) {
                    row[label] -= 1.0;
                }
                dlogits.mapv_inplace(|g| g / total_labeled as f64);
                let dsub = classifier_backward(cache, &dlogits, model.bank.tau, &mut grads.prototypes);
                scatter_rows(&mut dfeatures, &dsub, &f.labeled_idx, 1.0);
            }

            if n_pts > 0 {
                if let (Some(cache), Some(plan)) = (&f.point_caches[v], &point_plans[other]) {
                    let plan_slice =
                        plan.values.slice(s![point_offset..point_offset + n_pts, ..]);
                    // d(alpha * l_u_p) / d logits = alpha/(2M) (P - Q_other).
                    let scale = cfg.alpha / (2.0 * m_points as f64);
                    let dlogits = (&cache.probs - &plan_slice).mapv(|g| g * scale);
                    let dsub =
                        classifier_backward(cache, &dlogits, model.bank.tau, &mut grads.prototypes);
                    scatter_rows(&mut dfeatures, &dsub, &f.unlabeled_idx, 1.0);
                }
            }

            if n_reg > 0 {
                if let (Some(cache), Some(plan)) = (&f.region_caches[v], &region_plans[other]) {
                    let plan_slice =
                        plan.values.slice(s![region_offset..region_offset + n_reg, ..]);
                    let scale = cfg.beta / (2.0 * k_regions as f64);
                    let dlogits = (&cache.probs - &plan_slice).mapv(|g| g * scale);
                    let dpooled =
                        classifier_backward(cache, &dlogits, model.bank.tau, &mut grads.prototypes);
                    // Mean pooling backward: spread over region members.
                    let part = f.partition.as_ref().unwrap();
                    for (r, members) in part.members().iter().enumerate() {
                        let w = 1.0 / members.len() as f64;
                        for &local in members {
                            let point_row = f.unlabeled_idx[local];
                            for d in 0..dim {
                                dfeatures[[point_row, d]] += w * dpooled[[r, d]];
                            }
                        }
                    }
                }
            }

            let enc_grads = model.encoder.backward(&f.caches[v], &dfeatures);
            grads.encoder.add_scaled(&enc_grads, 1.0);
        }
        point_offset += n_pts;
        region_offset += n_reg;
    }

    Ok(StepOutputs { l_s, l_u_p, l_u_r, total, kl_point, kl_region, grads, point_plans })
}

fn forward_scene(
    model: &Model,
    entry: &BatchScene<'_>,
    cfg: &TrainConfig,
) -> Result<SceneForward, PipelineError> {
    let scene = entry.scene;
    let labeled_idx: Vec<usize> =
        (0..scene.points.len()).filter(|&i| scene.known_mask[i]).collect();
    let labels: Vec<usize> = labeled_idx
        .iter()
        .map(|&i| scene.labels[i].expect("known point must be labeled") as usize)
        .collect();
    let unlabeled_idx: Vec<usize> =
        (0..scene.points.len()).filter(|&i| !scene.known_mask[i]).collect();

    let mut caches = Vec::with_capacity(2);
    let mut features: Vec<Array2<f64>> = Vec::with_capacity(2);
    for v in 0..2 {
        let (feats, cache) = model.encoder.forward_cached(&entry.encoder_input(v))?;
        features.push(feats);
        caches.push(cache);
    }

    // Region partition from view-1 coordinates of the unlabeled points.
    let partition = if unlabeled_idx.is_empty() {
        None
    } else {
        let pts: Vec<[f64; 3]> = unlabeled_idx.iter().map(|&i| entry.view1.points[i]).collect();
        let part = dbscan(&pts, cfg.dbscan_epsilon, cfg.dbscan_min_samples)?;
        if part.region_count > 0 {
            Some(part)
        } else {
            None
        }
    };

    let mut sup_caches = [None, None];
    let mut point_caches = [None, None];
    let mut region_caches = [None, None];
    for v in 0..2 {
        if !labeled_idx.is_empty() {
            let sub = features[v].select(Axis(0), &labeled_idx);
            let (_, cache) = classify_columns(&sub, &model.bank, model.known_columns())?;
            sup_caches[v] = Some(cache);
        }
        if !unlabeled_idx.is_empty() {
            let sub = features[v].select(Axis(0), &unlabeled_idx);
            let (_, cache) = classify_columns(&sub, &model.bank, model.novel_columns())?;
            point_caches[v] = Some(cache);
            if let Some(part) = &partition {
                let pooled = pool_region_features(&sub, part)?;
                let (_, cache) = classify_columns(&pooled, &model.bank, model.novel_columns())?;
                region_caches[v] = Some(cache);
            }
        }
    }

    let mut caches = caches.into_iter();
    Ok(SceneForward {
        caches: [caches.next().unwrap(), caches.next().unwrap()],
        labeled_idx,
        labels,
        unlabeled_idx,
        sup_caches,
        point_caches,
        region_caches,
        partition,
    })
}

fn stack_probs<'a>(
    forwards: &'a [SceneForward],
    rows: usize,
    cols: usize,
    pick: impl Fn(&'a SceneForward) -> &'a Option<ClassifierCache>,
) -> Array2<f64> {
    let mut out = Array2::zeros((rows, cols));
    let mut offset = 0;
    for f in forwards {
        if let Some(cache) = pick(f) {
            let n = cache.probs.nrows();
            out.slice_mut(s![offset..offset + n, ..]).assign(&cache.probs);
            offset += n;
        }
    }
    debug_assert_eq!(offset, rows);
    out
}

/// Solves both views' plans at one level and returns the mean column-
/// marginal KL against the uniform prior.
fn solve_level(
    stacked: &[Array2<f64>; 2],
    gamma: f64,
    solver: &SolverConfig,
) -> Result<([TransportPlan; 2], f64), PipelineError> {
    let n = stacked[0].ncols();
    let nu = Array1::from_elem(n, 1.0 / n as f64);
    let mut plans = Vec::with_capacity(2);
    let mut kl_sum = 0.0;
    for probs in stacked {
        let p = ProbabilityMatrix::new(probs.clone())?;
        let cfg = SolverConfig { gamma, ..*solver };
        let plan = semi_relaxed_ot(&p, &cfg, &MarginalPair::uniform(p.nrows(), n))?;
        kl_sum += kl_div(&plan.column_marginal(), &nu)?;
        plans.push(plan);
    }
    let mut it = plans.into_iter();
    Ok(([it.next().unwrap(), it.next().unwrap()], kl_sum / 2.0))
}

/// `0.5 * [(1/M) <Q_1, -log P_2> + (1/M) <Q_2, -log P_1>]`.
fn cross_entropy_exchange(plans: &[TransportPlan; 2], probs: &[Array2<f64>; 2]) -> f64 {
    let m = probs[0].nrows() as f64;
    let mut total = 0.0;
    for (plan, p) in [(&plans[0], &probs[1]), (&plans[1], &probs[0])] {
        for (q, pv) in plan.values.iter().zip(p.iter()) {
            if *q != 0.0 {
                total += q * -pv.max(f64::MIN_POSITIVE).ln();
            }
        }
    }
    total / (2.0 * m)
}

fn scatter_rows(target: &mut Array2<f64>, rows: &Array2<f64>, idx: &[usize], factor: f64) {
    for (local, &global) in idx.iter().enumerate() {
        for d in 0..rows.ncols() {
            target[[global, d]] += factor * rows[[local, d]];
        }
    }
}
