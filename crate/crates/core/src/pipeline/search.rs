//! Grid search over the adaptive controller's rho and T, selected by the
//! training-set indicator (no labels needed for selection; novel accuracy
//! is reported alongside for analysis).

use serde::{Deserialize, Serialize};

use crate::gamma::GammaParams;

use super::{novel_accuracy, train, GammaSchedule, PipelineError, Scene, TrainConfig};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SearchRow {
    pub rho: f64,
    pub t: usize,
    /// Mean indicator over the final epoch of that run.
    pub indicator: f64,
    pub novel_accuracy: f64,
}

/// One full training run per grid cell; rows come back sorted by
/// indicator ascending, so the first row is the selected configuration.
pub fn hyperparam_search(
    dataset: &[Scene],
    rhos: &[f64],
    ts: &[usize],
    base: &TrainConfig,
) -> Result<Vec<SearchRow>, PipelineError> {
    if rhos.is_empty() || ts.is_empty() {
        return Err(PipelineError::InvalidConfig("empty search grid".into()));
    }
    let base_params = match &base.gamma_point {
        GammaSchedule::Adaptive(params) => *params,
        _ => {
            return Err(PipelineError::InvalidConfig(
                "hyperparameter search needs an adaptive gamma schedule".into(),
            ))
        }
    };

    let mut rows = Vec::new();
    for &rho in rhos {
        for &t in ts {
            let params = GammaParams { rho, t_required: t, ..base_params };
            let mut cfg = base.clone();
            cfg.gamma_point = GammaSchedule::Adaptive(params);
            cfg.gamma_region = GammaSchedule::Adaptive(params);
            let (model, history) = train(dataset, &cfg)?;
            rows.push(SearchRow {
                rho,
                t,
                indicator: history.final_indicator(),
                novel_accuracy: novel_accuracy(&model, dataset)?,
            });
        }
    }
    rows.sort_by(|a, b| a.indicator.partial_cmp(&b.indicator).unwrap());
    Ok(rows)
}
