//! Generation, recognition and joint losses with their gradients with
//! respect to the model outputs.
//!
//! Every per-example loss is summed over target positions and averaged over
//! the batch.

use ndarray::{s, Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{Ablation, LossBreakdown, TrainError};
use crate::model::ModelOutputs;
use crate::text::PAD;
use crate::Scalar;

/// Gradients of a scalar loss with respect to each model output.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads<F: Scalar> {
    pub token_logits: Array3<F>,
    pub global_logits: Array2<F>,
    pub local_pred: Array1<F>,
}

impl<F: Scalar> OutputGrads<F> {
    pub fn zeros_like(outputs: &ModelOutputs<F>) -> Self {
        Self {
            token_logits: Array3::zeros(outputs.token_logits.raw_dim()),
            global_logits: Array2::zeros(outputs.global_logits.raw_dim()),
            local_pred: Array1::zeros(outputs.local_pred.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GenLoss {
    pub total: f64,
    pub dial: f64,
    pub inst: f64,
    pub tokens: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RecLoss {
    pub ce: f64,
    pub mse: f64,
}

impl RecLoss {
    pub fn total(&self) -> f64 {
        self.ce + self.mse
    }
}

/// Labels for one batch: full targets (`BOS .. EOS`) plus progress labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Targets {
    pub target_ids: Vec<Vec<u32>>,
    pub global_labels: Vec<usize>,
    pub local_labels: Vec<f64>,
}

/// `(log-sum-exp, softmax)` of a logit row, computed in f64.
fn log_softmax_row<F: Scalar>(row: ArrayView1<F>) -> (f64, Vec<f64>) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64c()));
    let exps: Vec<f64> = row.iter().map(|v| (v.to_f64c() - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let lse = max + z.ln();
    (lse, exps.into_iter().map(|e| e / z).collect())
}

/// Negative log-likelihood of the targets, split by slot.
///
/// With `with_codes`, label position 0 is the dialogue code and position 1
/// the instruction code; every other position (words and EOS) counts as
/// response tokens. `grads`, when given, receives `dL/dlogits` scaled by
/// `weight`.
pub fn loss_gen_with_grad<F: Scalar>(
    outputs: &ModelOutputs<F>,
    target_ids: &[Vec<u32>],
    with_codes: bool,
    max_tgt_len: usize,
    weight: f64,
    mut grads: Option<&mut Array3<F>>,
) -> Result<GenLoss, TrainError> {
    let batch = target_ids.len();
    if batch == 0 || batch != outputs.token_logits.dim().0 {
        return Err(TrainError::Batch(format!(
            "{} targets for a batch of {}",
            batch,
            outputs.token_logits.dim().0
        )));
    }
    let inv_b = 1.0 / batch as f64;
    let mut loss = GenLoss::default();
    for (b, target) in target_ids.iter().enumerate() {
        if target.len() > max_tgt_len {
            return Err(TrainError::TargetTooLong {
                len: target.len(),
                max: max_tgt_len,
            });
        }
        let labels = &target[1..];
        if labels.len() != outputs.tgt_lens[b] {
            return Err(TrainError::Batch(format!(
                "example {b}: {} labels but {} logit rows",
                labels.len(),
                outputs.tgt_lens[b]
            )));
        }
        for (t, &label) in labels.iter().enumerate() {
            if label == PAD {
                continue;
            }
            let row = outputs.token_logits.slice(s![b, t, ..]);
            let (lse, probs) = log_softmax_row(row);
            let nll = (lse - row[label as usize].to_f64c()) * inv_b;
            match (with_codes, t) {
                (true, 0) => loss.dial += nll,
                (true, 1) => loss.inst += nll,
                _ => loss.tokens += nll,
            }
            if let Some(g) = grads.as_deref_mut() {
                let mut grow = g.slice_mut(s![b, t, ..]);
                for (v, (gv, p)) in grow.iter_mut().zip(probs).enumerate() {
                    let onehot = if v == label as usize { 1.0 } else { 0.0 };
                    *gv += F::from_f64c(weight * inv_b * (p - onehot));
                }
            }
        }
    }
    loss.total = loss.dial + loss.inst + loss.tokens;
    Ok(loss)
}

pub fn loss_gen<F: Scalar>(
    outputs: &ModelOutputs<F>,
    target_ids: &[Vec<u32>],
    ablation: Ablation,
    max_tgt_len: usize,
) -> Result<GenLoss, TrainError> {
    loss_gen_with_grad(outputs, target_ids, ablation.with_codes(), max_tgt_len, 1.0, None)
}

/// Cross-entropy over the global head plus squared error of the local head.
pub fn loss_rec_with_grad<F: Scalar>(
    outputs: &ModelOutputs<F>,
    global_labels: &[usize],
    local_labels: &[f64],
    weight: f64,
    mut grads: Option<(&mut Array2<F>, &mut Array1<F>)>,
) -> Result<RecLoss, TrainError> {
    let batch = global_labels.len();
    let classes = outputs.global_logits.ncols();
    if batch == 0 || batch != local_labels.len() || batch != outputs.global_logits.nrows() {
        return Err(TrainError::Batch(format!(
            "{} global and {} local labels for a batch of {}",
            batch,
            local_labels.len(),
            outputs.global_logits.nrows()
        )));
    }
    let inv_b = 1.0 / batch as f64;
    let mut loss = RecLoss::default();
    for b in 0..batch {
        let label = global_labels[b];
        if label >= classes {
            return Err(TrainError::Label(format!(
                "global label {label} outside 0..{classes}"
            )));
        }
        let local = local_labels[b];
        if !(local > 0.0 && local <= 1.0) {
            return Err(TrainError::Label(format!("local label {local} outside (0, 1]")));
        }
        let row = outputs.global_logits.row(b);
        let (lse, probs) = log_softmax_row(row);
        loss.ce += (lse - row[label].to_f64c()) * inv_b;
        let diff = outputs.local_pred[b].to_f64c() - local;
        loss.mse += diff * diff * inv_b;
        if let Some((gg, gl)) = grads.as_mut() {
            for (c, p) in probs.into_iter().enumerate() {
                let onehot = if c == label { 1.0 } else { 0.0 };
                gg[[b, c]] += F::from_f64c(weight * inv_b * (p - onehot));
            }
            gl[b] += F::from_f64c(weight * inv_b * 2.0 * diff);
        }
    }
    Ok(loss)
}

pub fn loss_rec<F: Scalar>(
    outputs: &ModelOutputs<F>,
    global_labels: &[usize],
    local_labels: &[f64],
) -> Result<RecLoss, TrainError> {
    loss_rec_with_grad(outputs, global_labels, local_labels, 1.0, None)
}

/// Relative weights of the two loss groups; both default to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gen: f64,
    pub rec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { gen: 1.0, rec: 1.0 }
    }
}

/// A scalar training objective over model outputs.
pub trait Objective {
    fn max_tgt_len(&self) -> usize;

    fn evaluate<F: Scalar>(
        &self,
        outputs: &ModelOutputs<F>,
        targets: &Targets,
        want_grads: bool,
    ) -> Result<(LossBreakdown, Option<OutputGrads<F>>), TrainError>;
}

/// Generation loss plus, when the ablation enables it, recognition loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointObjective {
    pub ablation: Ablation,
    pub weights: LossWeights,
    pub max_tgt_len: usize,
}

impl JointObjective {
    pub fn new(ablation: Ablation, max_tgt_len: usize) -> Self {
        Self {
            ablation,
            weights: LossWeights::default(),
            max_tgt_len,
        }
    }
}

impl Objective for JointObjective {
    fn max_tgt_len(&self) -> usize {
        self.max_tgt_len
    }

    fn evaluate<F: Scalar>(
        &self,
        outputs: &ModelOutputs<F>,
        targets: &Targets,
        want_grads: bool,
    ) -> Result<(LossBreakdown, Option<OutputGrads<F>>), TrainError> {
        let mut grads = want_grads.then(|| OutputGrads::zeros_like(outputs));
        let gen = loss_gen_with_grad(
            outputs,
            &targets.target_ids,
            self.ablation.with_codes(),
            self.max_tgt_len,
            self.weights.gen,
            grads.as_mut().map(|g| &mut g.token_logits),
        )?;
        let rec = if self.ablation.with_progress() {
            loss_rec_with_grad(
                outputs,
                &targets.global_labels,
                &targets.local_labels,
                self.weights.rec,
                grads
                    .as_mut()
                    .map(|g| (&mut g.global_logits, &mut g.local_pred)),
            )?
        } else {
            RecLoss::default()
        };
        let breakdown = LossBreakdown::new(gen, rec, self.weights);
        Ok((breakdown, grads))
    }
}

/// Breakdown for a batch, without gradients.
pub fn joint_loss<F: Scalar>(
    outputs: &ModelOutputs<F>,
    targets: &Targets,
    ablation: Ablation,
    max_tgt_len: usize,
) -> Result<LossBreakdown, TrainError> {
    Ok(JointObjective::new(ablation, max_tgt_len)
        .evaluate(outputs, targets, false)?
        .0)
}
