//! Losses, optimisation and the training loop.

mod gradcheck;
mod loss;
mod optim;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, GradCheckSample};
pub use loss::{
    joint_loss, loss_gen, loss_gen_with_grad, loss_rec, loss_rec_with_grad, GenLoss,
    JointObjective, LossWeights, Objective, OutputGrads, RecLoss, Targets,
};
pub use optim::{clip_grad_norm, Adam};
pub use train::{
    batch_gradients, evaluate_loss, prepare_examples, train, EpochRecord, TrainExample,
    TrainOutcome,
};

use crate::corpus::CorpusError;
use crate::model::{ModelConfig, ModelError};

/// Which auxiliary signals a model is trained with.
///
/// `AC` adds the two action-code slots to the generation target, `PR` adds
/// the global/local progress recognition heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Ablation {
    #[serde(rename = "RG")]
    Rg,
    #[serde(rename = "RG_AC")]
    RgAc,
    #[serde(rename = "RG_PR")]
    RgPr,
    #[default]
    #[serde(rename = "RG_AC_PR")]
    RgAcPr,
}

impl Ablation {
    /// Table order.
    pub const ALL: [Ablation; 4] = [Ablation::Rg, Ablation::RgAc, Ablation::RgPr, Ablation::RgAcPr];

    pub fn with_codes(self) -> bool {
        matches!(self, Ablation::RgAc | Ablation::RgAcPr)
    }

    pub fn with_progress(self) -> bool {
        matches!(self, Ablation::RgPr | Ablation::RgAcPr)
    }

    /// Row label as printed in tables, e.g. `RG + AC`.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::Rg => "RG",
            Ablation::RgAc => "RG + AC",
            Ablation::RgPr => "RG + PR",
            Ablation::RgAcPr => "RG + AC + PR",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Rg => "RG",
            Ablation::RgAc => "RG_AC",
            Ablation::RgPr => "RG_PR",
            Ablation::RgAcPr => "RG_AC_PR",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| if c == '+' || c == '-' { '_' } else { c.to_ascii_uppercase() })
            .collect();
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| format!("unknown ablation {s:?}; expected one of RG, RG_AC, RG_PR, RG_AC_PR"))
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-batch loss components. Generation parts are split by target slot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub gen_total: f64,
    pub gen_dial: f64,
    pub gen_inst: f64,
    pub gen_tokens: f64,
    pub rec_ce: f64,
    pub rec_mse: f64,
    pub joint: f64,
}

impl LossBreakdown {
    pub fn new(gen: GenLoss, rec: RecLoss, weights: LossWeights) -> Self {
        Self {
            gen_total: gen.total,
            gen_dial: gen.dial,
            gen_inst: gen.inst,
            gen_tokens: gen.tokens,
            rec_ce: rec.ce,
            rec_mse: rec.mse,
            joint: weights.gen * gen.total + weights.rec * rec.total(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    fn values(&self) -> [f64; 7] {
        [
            self.gen_total,
            self.gen_dial,
            self.gen_inst,
            self.gen_tokens,
            self.rec_ce,
            self.rec_mse,
            self.joint,
        ]
    }

    /// `self += w * other`, field by field.
    pub fn add_scaled(&mut self, other: &LossBreakdown, w: f64) {
        self.gen_total += w * other.gen_total;
        self.gen_dial += w * other.gen_dial;
        self.gen_inst += w * other.gen_inst;
        self.gen_tokens += w * other.gen_tokens;
        self.rec_ce += w * other.rec_ce;
        self.rec_mse += w * other.rec_mse;
        self.joint += w * other.joint;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub ablation: Ablation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub weights: LossWeights,
    /// Most recent turns fed to the encoder.
    pub context_turns: usize,
    pub min_freq: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub max_instructions: usize,
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ablation: Ablation::RgAcPr,
            epochs: 30,
            batch_size: 16,
            learning_rate: 3e-4,
            grad_clip: 1.0,
            seed: 7,
            patience: 5,
            weights: LossWeights::default(),
            context_turns: 12,
            min_freq: 1,
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 256,
            max_src_len: 256,
            max_tgt_len: 48,
            max_instructions: 16,
            dropout: 0.1,
        }
    }
}

impl TrainConfig {
    /// A configuration that trains in minutes on one CPU core.
    pub fn fast() -> Self {
        Self {
            epochs: 12,
            batch_size: 8,
            learning_rate: 3e-3,
            context_turns: 2,
            d_model: 32,
            n_layers: 1,
            n_heads: 2,
            ffn_dim: 64,
            max_src_len: 96,
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_layers_enc: self.n_layers,
            n_layers_dec: self.n_layers,
            n_heads: self.n_heads,
            ffn_dim: self.ffn_dim,
            max_src_len: self.max_src_len,
            max_tgt_len: self.max_tgt_len,
            max_instructions: self.max_instructions,
            vocab_size,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.grad_clip < 0.0 || self.context_turns == 0 {
            return Err(TrainError::Config(
                "grad_clip must be non-negative and context_turns positive".into(),
            ));
        }
        self.model_config(crate::text::SPECIALS.len()).validate()?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("bad batch: {0}")]
    Batch(String),
    #[error("bad label: {0}")]
    Label(String),
    #[error("target of {len} tokens exceeds max_tgt_len {max}")]
    TargetTooLong { len: usize, max: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}: {loss:?}")]
    NonFinite {
        epoch: usize,
        step: usize,
        loss: LossBreakdown,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
