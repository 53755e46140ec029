//! Adam with decoupled weight decay, plus the cosine learning-rate
//! schedule (initial -> final over the total step count).

use ndarray::{Array1, Array2};

use crate::model::{EncoderGrads, Model};

pub fn cosine_lr(initial: f64, fin: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return initial;
    }
    let t = (step.min(total_steps)) as f64 / total_steps as f64;
    fin + 0.5 * (initial - fin) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Full gradient of one training step.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub encoder: EncoderGrads,
    pub prototypes: Array2<f64>,
}

impl ModelGrads {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            encoder: EncoderGrads::zeros_like(&model.encoder),
            prototypes: Array2::zeros(model.bank.prototypes.dim()),
        }
    }
}

pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
    m_weights: Vec<Array2<f64>>,
    v_weights: Vec<Array2<f64>>,
    m_biases: Vec<Array1<f64>>,
    v_biases: Vec<Array1<f64>>,
    m_proto: Array2<f64>,
    v_proto: Array2<f64>,
}

impl AdamW {
    pub fn new(model: &Model, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m_weights: model.encoder.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_weights: model.encoder.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_biases: model.encoder.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_biases: model.encoder.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            m_proto: Array2::zeros(model.bank.prototypes.dim()),
            v_proto: Array2::zeros(model.bank.prototypes.dim()),
        }
    }

    /// One update; prototype columns are renormalized afterwards to keep
    /// the cosine classifier exact.
    pub fn step(&mut self, model: &mut Model, grads: &ModelGrads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);

        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
        };

        for l in 0..model.encoder.weights.len() {
            for ((p, &g), (m, v)) in model.encoder.weights[l]
                .iter_mut()
                .zip(grads.encoder.weights[l].iter())
                .zip(self.m_weights[l].iter_mut().zip(self.v_weights[l].iter_mut()))
            {
                update(p, g, m, v);
            }
            for ((p, &g), (m, v)) in model.encoder.biases[l]
                .iter_mut()
                .zip(grads.encoder.biases[l].iter())
                .zip(self.m_biases[l].iter_mut().zip(self.v_biases[l].iter_mut()))
            {
                update(p, g, m, v);
            }
        }
        for ((p, &g), (m, v)) in model
            .bank
            .prototypes
            .iter_mut()
            .zip(grads.prototypes.iter())
            .zip(self.m_proto.iter_mut().zip(self.v_proto.iter_mut()))
        {
            update(p, g, m, v);
        }
        model.bank.renormalize();
    }
}
