//! Synthetic instruction-aligned tutoring corpus.

mod annotate;
mod generate;
mod io;
mod split;
mod types;

use std::path::Path;

pub use annotate::{annotate_corpus, annotate_dialogue, FeedbackLexicon};
pub use generate::{block_len, generate_corpus, tutor_steps, StudentAnswer, StudentScript, ERROR_PAIRS};
pub use io::{
    read_corpus, read_curricula, read_jsonl, write_corpus, write_curricula, CURRICULA_FILE,
    DIALOGUES_FILE, META_FILE, SCHEMA_VERSION,
};
pub use split::{split_corpus, CorpusSplits, DEFAULT_RATIOS};
pub use types::*;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid corpus config: {0}")]
    Config(String),
    #[error("invalid corpus record: {0}")]
    Invalid(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: String },
    #[error("{0} holds no records")]
    Empty(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
