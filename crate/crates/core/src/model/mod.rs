//! Dual-level model: point-wise encoder, one shared prototype bank for
//! point and region predictions (cosine classifier with temperature), the
//! loss terms, and two-view augmentation.

mod encoder;

pub use encoder::{EncoderGrads, EncoderParams, ForwardCache, DEFAULT_WIDTHS};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ot::TransportPlan;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("feature row {row} has near-zero norm")]
    ZeroFeature { row: usize },
    #[error("label {label} outside the {classes} known columns")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Prototype columns for known then novel classes, stored unit-normalized
/// and shared between the point and region branches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrototypeBank {
    /// D x (known + novel).
    pub prototypes: Array2<f64>,
    /// Softmax temperature.
    pub tau: f64,
}

impl PrototypeBank {
    pub fn init<R: Rng>(dim: usize, classes: usize, tau: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, 1.0).unwrap();
        let mut prototypes = Array2::from_shape_fn((dim, classes), |_| dist.sample(rng));
        normalize_columns(&mut prototypes);
        Self { prototypes, tau }
    }

    pub fn classes(&self) -> usize {
        self.prototypes.ncols()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.nrows()
    }

    /// Restores unit column norms (called after each optimizer step).
    pub fn renormalize(&mut self) {
        normalize_columns(&mut self.prototypes);
    }
}

fn normalize_columns(m: &mut Array2<f64>) {
    for mut col in m.columns_mut() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
        }
    }
}

/// Softmax over cosine similarity to every prototype, rows sum to 1.
pub fn classify(features: &Array2<f64>, bank: &PrototypeBank) -> Result<Array2<f64>, ModelError> {
    let (probs, _) = classify_columns(features, bank, 0..bank.classes())?;
    Ok(probs)
}

/// Cache for backprop through `classify_columns`.
#[derive(Debug, Clone)]
pub struct ClassifierCache {
    pub probs: Array2<f64>,
    feat_norms: Array1<f64>,
    feat_hat: Array2<f64>,
    proto_hat: Array2<f64>,
    proto_norms: Array1<f64>,
    col_start: usize,
}

/// Softmax over the cosine logits restricted to the half-open column
/// range (known columns for supervised rows, novel columns for the
/// self-labeling branch).
pub fn classify_columns(
    features: &Array2<f64>,
    bank: &PrototypeBank,
    cols: std::ops::Range<usize>,
) -> Result<(Array2<f64>, ClassifierCache), ModelError> {
    if features.ncols() != bank.dim() {
        return Err(ModelError::ShapeMismatch {
            expected: format!("feature dim {}", bank.dim()),
            got: format!("{}", features.ncols()),
        });
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    let n = features.nrows();
    let subset = bank.prototypes.slice(ndarray::s![.., cols.clone()]);

    let mut feat_hat = features.clone();
    let mut feat_norms = Array1::zeros(n);
    for (i, mut row) in feat_hat.rows_mut().into_iter().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(ModelError::ZeroFeature { row: i });
        }
        row.mapv_inplace(|v| v / norm);
        feat_norms[i] = norm;
    }
    let mut proto_hat = subset.to_owned();
    let mut proto_norms = Array1::zeros(proto_hat.ncols());
    for (j, mut col) in proto_hat.columns_mut().into_iter().enumerate() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(ModelError::ZeroFeature { row: j });
        }
        col.mapv_inplace(|v| v / norm);
        proto_norms[j] = norm;
    }

    let mut logits = feat_hat.dot(&proto_hat);
    logits.mapv_inplace(|v| v / bank.tau);
    let mut probs = logits;
    for mut row in probs.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    let cache = ClassifierCache {
        probs: probs.clone(),
        feat_norms,
        feat_hat,
        proto_hat,
        proto_norms,
        col_start: cols.start,
    };
    Ok((probs, cache))
}

/// Backprop through softmax(cosine / tau). `dlogits` is d loss / d logits.
/// Returns d loss / d features and accumulates prototype gradients into
/// `proto_grad` (full-bank width) at the cached column offset.
pub fn classifier_backward(
    cache: &ClassifierCache,
    dlogits: &Array2<f64>,
    tau: f64,
    proto_grad: &mut Array2<f64>,
) -> Array2<f64> {
    // d/d feat_hat = dlogits . proto_hat^T / tau, then project out the
    // radial component and divide by the original norm.
    let dfeat_hat = dlogits.dot(&cache.proto_hat.t()) / tau;
    let mut dfeatures = Array2::zeros(dfeat_hat.dim());
    for i in 0..dfeat_hat.nrows() {
        let fh = cache.feat_hat.row(i);
        let g = dfeat_hat.row(i);
        let radial: f64 = g.dot(&fh);
        let norm = cache.feat_norms[i];
        for d in 0..g.len() {
            dfeatures[[i, d]] = (g[d] - radial * fh[d]) / norm;
        }
    }

    // d/d proto_hat = feat_hat^T . dlogits / tau, same tangent projection.
    let dproto_hat = cache.feat_hat.t().dot(dlogits) / tau;
    for j in 0..dproto_hat.ncols() {
        let ph = cache.proto_hat.column(j);
        let g = dproto_hat.column(j);
        let radial: f64 = g.dot(&ph);
        let norm = cache.proto_norms[j];
        for d in 0..g.len() {
            proto_grad[[d, cache.col_start + j]] += (g[d] - radial * ph[d]) / norm;
        }
    }
    dfeatures
}

/// Mean cross-entropy of hard labels: `mean(-log probs[label])`.
pub fn supervised_loss(probs: &Array2<f64>, labels: &[usize]) -> Result<f64, ModelError> {
    if probs.nrows() != labels.len() {
        return Err(ModelError::ShapeMismatch {
            expected: format!("{} label rows", probs.nrows()),
            got: format!("{}", labels.len()),
        });
    }
    let mut total = 0.0;
    for (row, &label) in probs.rows().into_iter().zip(labels.iter()) {
        if label >= row.len() {
            return Err(ModelError::LabelOutOfRange { label, classes: row.len() });
        }
        total += -row[label].max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / labels.len().max(1) as f64)
}

/// Pseudo-label cross-entropy: `(1/M) <plan, -log probs>`.
pub fn unsup_loss(plan: &TransportPlan, probs: &Array2<f64>) -> Result<f64, ModelError> {
    if plan.values.dim() != probs.dim() {
        return Err(ModelError::ShapeMismatch {
            expected: format!("{:?}", plan.values.dim()),
            got: format!("{:?}", probs.dim()),
        });
    }
    let m = plan.values.nrows() as f64;
    let mut total = 0.0;
    for (q, p) in plan.values.iter().zip(probs.iter()) {
        if *q != 0.0 {
            total += q * -p.max(f64::MIN_POSITIVE).ln();
        }
    }
    Ok(total / m)
}

/// `L = L_s + alpha * L_u^p + beta * L_u^r`.
pub fn total_loss(ls: f64, lup: f64, lur: f64, alpha: f64, beta: f64) -> f64 {
    ls + alpha * lup + beta * lur
}

/// One augmented copy of a scene: scale in [0.95, 1.05] and per-axis
/// rotations in [-pi/20, pi/20]. Point index i corresponds to source
/// point i.
#[derive(Debug, Clone)]
pub struct SceneView {
    pub points: Vec<[f64; 3]>,
    pub scale: f64,
    pub angles: [f64; 3],
}

impl SceneView {
    pub fn coords(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.points.len(), 3));
        for (i, p) in self.points.iter().enumerate() {
            m[[i, 0]] = p[0];
            m[[i, 1]] = p[1];
            m[[i, 2]] = p[2];
        }
        m
    }
}

pub const SCALE_RANGE: (f64, f64) = (0.95, 1.05);
pub const ROTATION_LIMIT: f64 = std::f64::consts::PI / 20.0;

/// Two independent augmentations of the same points. Draw order per view:
/// scale, then x/y/z angles.
pub fn augment_views<R: Rng>(points: &[[f64; 3]], rng: &mut R) -> (SceneView, SceneView) {
    let mut draw = |points: &[[f64; 3]]| {
        let scale = rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        let angles = [
            rng.gen_range(-ROTATION_LIMIT..=ROTATION_LIMIT),
            rng.gen_range(-ROTATION_LIMIT..=ROTATION_LIMIT),
            rng.gen_range(-ROTATION_LIMIT..=ROTATION_LIMIT),
        ];
        apply_transform(points, scale, angles)
    };
    (draw(points), draw(points))
}

/// Applies `scale * Rz(az) Ry(ay) Rx(ax)` to every point.
pub fn apply_transform(points: &[[f64; 3]], scale: f64, angles: [f64; 3]) -> SceneView {
    let (sx, cx) = angles[0].sin_cos();
    let (sy, cy) = angles[1].sin_cos();
    let (sz, cz) = angles[2].sin_cos();
    // Row-major rotation matrix Rz * Ry * Rx.
    let r = [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ];
    let points = points
        .iter()
        .map(|p| {
            [
                scale * (r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2]),
                scale * (r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2]),
                scale * (r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2]),
            ]
        })
        .collect();
    SceneView { points, scale, angles }
}

/// Encoder forward on a view's coordinates.
pub fn encode(view: &SceneView, params: &EncoderParams) -> Result<Array2<f64>, ModelError> {
    params.forward(&view.coords())
}

/// Encoder plus shared prototype bank; the single trainable unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub encoder: EncoderParams,
    pub bank: PrototypeBank,
    pub num_known: usize,
    pub num_novel: usize,
}

impl Model {
    pub fn init<R: Rng>(
        widths: &[usize],
        num_known: usize,
        num_novel: usize,
        tau: f64,
        rng: &mut R,
    ) -> Self {
        let encoder = EncoderParams::init(widths, rng);
        let dim = encoder.feature_dim();
        Self { encoder, bank: PrototypeBank::init(dim, num_known + num_novel, tau, rng), num_known, num_novel }
    }

    pub fn known_columns(&self) -> std::ops::Range<usize> {
        0..self.num_known
    }

    pub fn novel_columns(&self) -> std::ops::Range<usize> {
        self.num_known..self.num_known + self.num_novel
    }
}
