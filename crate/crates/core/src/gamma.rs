//! Adaptive regularization control: halve gamma (more generally, multiply
//! by lambda) whenever the plan's column-marginal KL stays at or below rho
//! for T consecutive observations. Step-decay and cosine schedules are the
//! ablation baselines, and the indicator score drives hyperparameter
//! selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GammaError {
    #[error("kl value {0} is negative")]
    NegativeKl(f64),
    #[error("step {t} is beyond the schedule horizon {t_max}")]
    OutOfRange { t: usize, t_max: usize },
    #[error("invalid controller parameters: {0}")]
    InvalidParams(String),
}

/// Controller parameters. Defaults: gamma0 = 1, lambda = 0.5, rho = 0.005,
/// T = 10.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct GammaParams {
    pub gamma0: f64,
    pub lambda: f64,
    pub rho: f64,
    pub t_required: usize,
}

impl Default for GammaParams {
    fn default() -> Self {
        Self { gamma0: 1.0, lambda: 0.5, rho: 0.005, t_required: 10 }
    }
}

impl GammaParams {
    pub fn validate(&self) -> Result<(), GammaError> {
        if !(self.gamma0 > 0.0) {
            return Err(GammaError::InvalidParams(format!("gamma0 {}", self.gamma0)));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(GammaError::InvalidParams(format!("lambda {}", self.lambda)));
        }
        if !(self.rho > 0.0) {
            return Err(GammaError::InvalidParams(format!("rho {}", self.rho)));
        }
        if self.t_required == 0 {
            return Err(GammaError::InvalidParams("T must be >= 1".into()));
        }
        Ok(())
    }
}

/// One adaptive gamma controller (the training loop owns two: point level
/// and region level, never shared).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaState {
    gamma: f64,
    params: GammaParams,
    streak: usize,
    iteration: u64,
    /// (iteration, new gamma) recorded at every decay event.
    history: Vec<(u64, f64)>,
}

impl GammaState {
    pub fn new(params: GammaParams) -> Result<Self, GammaError> {
        params.validate()?;
        Ok(Self { gamma: params.gamma0, params, streak: 0, iteration: 0, history: Vec::new() })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn streak(&self) -> usize {
        self.streak
    }

    pub fn params(&self) -> &GammaParams {
        &self.params
    }

    pub fn history(&self) -> &[(u64, f64)] {
        &self.history
    }

    /// Feeds one KL observation. The sub-rho streak grows on `kl <= rho`
    /// and resets on violation; reaching T triggers `gamma <- lambda *
    /// gamma` and resets the streak, so each decay needs T fresh sub-rho
    /// observations. Returns whether a decay fired.
    pub fn observe_kl(&mut self, kl: f64) -> Result<bool, GammaError> {
        if !(kl >= 0.0) {
            return Err(GammaError::NegativeKl(kl));
        }
        self.iteration += 1;
        if kl <= self.params.rho {
            self.streak += 1;
            if self.streak >= self.params.t_required {
                self.gamma *= self.params.lambda;
                self.streak = 0;
                self.history.push((self.iteration, self.gamma));
                return Ok(true);
            }
        } else {
            self.streak = 0;
        }
        Ok(false)
    }
}

/// `gamma0 * lambda^epoch` (the per-epoch decay baseline).
pub fn step_decay(gamma0: f64, lambda: f64, epoch: usize) -> f64 {
    gamma0 * lambda.powi(epoch as i32)
}

/// Cosine annealing from `gamma0` down to `gamma_min` over `t_max` steps;
/// both endpoints are exact.
pub fn cosine_anneal(
    gamma0: f64,
    gamma_min: f64,
    t: usize,
    t_max: usize,
) -> Result<f64, GammaError> {
    if t > t_max {
        return Err(GammaError::OutOfRange { t, t_max });
    }
    if t == 0 {
        return Ok(gamma0);
    }
    if t == t_max {
        return Ok(gamma_min);
    }
    let ratio = t as f64 / t_max as f64;
    Ok(gamma_min + 0.5 * (gamma0 - gamma_min) * (1.0 + (std::f64::consts::PI * ratio).cos()))
}

/// Hyperparameter selection score: `total_loss + gamma * kl`. Lower is
/// better.
pub fn indicator(total_loss: f64, gamma: f64, kl: f64) -> f64 {
    total_loss + gamma * kl
}
