//! BLEU, code and progress metrics, and the ablation harness.

mod ablation;
mod bleu;
mod eval;

use std::path::Path;

pub use ablation::{run_ablation, AblationRow, AblationTable};
pub use bleu::{bleu, bleu_1_to_4};
pub use eval::{evaluate, majority_transition_rate, MetricsReport, OracleModel};

use crate::corpus::CorpusError;
use crate::model::ModelError;
use crate::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("max n-gram order must be in 1..=4, got {0}")]
    MaxN(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl MetricsError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        MetricsError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
