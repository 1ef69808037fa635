//! Central-difference gradient check in double precision.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::Objective;
use super::train::{batch_gradients, evaluate_loss, TrainExample};
use super::TrainError;
use crate::model::{Layout, ModelConfig, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub samples: usize,
    pub epsilon: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// numerically zero are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            samples: 128,
            epsilon: 1e-4,
            floor: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSample {
    pub tensor: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub samples: Vec<GradCheckSample>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradCheckSample> {
        self.samples
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients of `objective` with central differences.
///
/// Every tensor contributes at least one sampled entry; the rest are drawn
/// uniformly over all parameters. Dropout is off.
pub fn grad_check<O: Objective>(
    params: &ModelParams<f64>,
    config: &ModelConfig,
    batch: &[TrainExample],
    objective: &O,
    check: &GradCheckConfig,
) -> Result<GradCheckReport, TrainError> {
    let layout = Layout::new(config);
    let refs: Vec<&TrainExample> = batch.iter().collect();
    let (_, analytic) = batch_gradients(params, config, &refs, objective, None)?;

    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let mut picks: Vec<(usize, usize, usize)> = Vec::new();
    for (t, tensor) in params.tensors.iter().enumerate() {
        picks.push((t, rng.gen_range(0..tensor.nrows()), rng.gen_range(0..tensor.ncols())));
    }
    let total = params.num_parameters();
    while picks.len() < check.samples.max(params.tensors.len()) && picks.len() < total {
        let mut flat = rng.gen_range(0..total);
        let mut t = 0;
        while flat >= params.tensors[t].len() {
            flat -= params.tensors[t].len();
            t += 1;
        }
        let cols = params.tensors[t].ncols();
        let pick = (t, flat / cols, flat % cols);
        if !picks.contains(&pick) {
            picks.push(pick);
        }
    }
    picks.shuffle(&mut rng);

    let loss_at = |p: &ModelParams<f64>| -> Result<f64, TrainError> {
        Ok(evaluate_loss(p, config, batch, objective, batch.len())?.joint)
    };
    let mut probe = params.clone();
    let mut samples = Vec::with_capacity(picks.len());
    for (t, r, c) in picks {
        let original = probe.tensors[t][[r, c]];
        probe.tensors[t][[r, c]] = original + check.epsilon;
        let plus = loss_at(&probe)?;
        probe.tensors[t][[r, c]] = original - check.epsilon;
        let minus = loss_at(&probe)?;
        probe.tensors[t][[r, c]] = original;
        let numeric = (plus - minus) / (2.0 * check.epsilon);
        let a = analytic[t][[r, c]];
        samples.push(GradCheckSample {
            tensor: layout.specs[t].name.clone(),
            row: r,
            col: c,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric, check.floor),
        });
    }
    let max_rel_error = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        samples,
        max_rel_error,
    })
}
