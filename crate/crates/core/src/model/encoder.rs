//! Point-wise feed-forward encoder: 3D coordinates through tanh hidden
//! layers to a linear feature head. Stands in for a heavy segmentation
//! backbone at desk scale; the losses and the self-labeling machinery are
//! agnostic to it.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Layer widths default to 3 -> 64 -> 64 -> 32.
pub const DEFAULT_WIDTHS: [usize; 4] = [3, 64, 64, 32];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderParams {
    /// Per-layer weight matrices, input-dim x output-dim.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl EncoderParams {
    /// Seeded init: weights ~ N(0, 1/fan_in), zero biases.
    pub fn init<R: Rng>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let dist = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| dist.sample(rng)));
            biases.push(Array1::zeros(fan_out));
        }
        Self { weights, biases }
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.last().map(|w| w.ncols()).unwrap_or(0)
    }

    pub fn input_dim(&self) -> usize {
        self.weights.first().map(|w| w.nrows()).unwrap_or(0)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.weights.iter().map(|m| m.ncols()));
        w
    }

    /// Forward pass; rows of `coords` are points.
    pub fn forward(&self, coords: &Array2<f64>) -> Result<Array2<f64>, ModelError> {
        Ok(self.forward_cached(coords)?.0)
    }

    /// Forward pass keeping the per-layer activations for backprop.
    pub fn forward_cached(
        &self,
        coords: &Array2<f64>,
    ) -> Result<(Array2<f64>, ForwardCache), ModelError> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput);
        }
        if coords.ncols() != self.input_dim() {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{} input columns", self.input_dim()),
                got: format!("{}", coords.ncols()),
            });
        }
        let n_layers = self.weights.len();
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(n_layers + 1);
        activations.push(coords.clone());
        for (l, (w, b)) in self.weights.iter().zip(self.biases.iter()).enumerate() {
            let mut z = activations[l].dot(w);
            z += b;
            if l + 1 < n_layers {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(z);
        }
        let out = activations.last().unwrap().clone();
        Ok((out, ForwardCache { activations }))
    }

    /// Backprop `grad_out` (d loss / d features) to parameter gradients.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> EncoderGrads {
        let n_layers = self.weights.len();
        let mut d_weights = Vec::with_capacity(n_layers);
        let mut d_biases = Vec::with_capacity(n_layers);
        let mut delta = grad_out.clone();
        for l in (0..n_layers).rev() {
            // The last layer is linear; hidden layers apply tanh whose
            // derivative is 1 - a^2 on the stored post-activation.
            if l + 1 < n_layers {
                let act = &cache.activations[l + 1];
                delta = &delta * &act.mapv(|a| 1.0 - a * a);
            }
            d_weights.push(cache.activations[l].t().dot(&delta));
            d_biases.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                delta = delta.dot(&self.weights[l].t());
            }
        }
        d_weights.reverse();
        d_biases.reverse();
        EncoderGrads { weights: d_weights, biases: d_biases }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l+1]` the output of
    /// layer l (post-tanh for hidden layers).
    pub activations: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: params.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &EncoderGrads, factor: f64) {
        for (a, b) in self.weights.iter_mut().zip(other.weights.iter()) {
            a.scaled_add(factor, b);
        }
        for (a, b) in self.biases.iter_mut().zip(other.biases.iter()) {
            a.scaled_add(factor, b);
        }
    }
}
