//! Instruction-grounded tutoring dialogue system.
//!
//! The crate is organised around the pipeline a tutoring bot goes through:
//!
//! * [`corpus`] generates, annotates, splits and serialises synthetic
//!   instruction-aligned tutoring dialogues.
//! * [`text`] holds the word-level codec, the vocabulary and the
//!   source/target layouts fed to the model.
//! * [`model`] is a small encoder-decoder transformer with two progress
//!   recognition heads, constrained decoding and checkpointing.
//! * [`trainer`] implements the generation and recognition losses, the
//!   optimisation loop and finite-difference gradient checking.
//! * [`engine`] drives live tutoring sessions on top of a trained model.
//! * [`metrics`] computes BLEU and code/progress accuracies and runs the
//!   four-way ablation.

pub mod corpus;
pub mod engine;
pub mod metrics;
pub mod model;
pub mod tape;
pub mod text;
pub mod trainer;

mod scalar;

pub use corpus::{
    AlignedDialogue, AnnotatedExample, Corpus, CorpusConfig, Curriculum, DialCode, FeedbackLexicon,
    InstCode, Instruction, InstructionKind, Role, Turn,
};
pub use engine::{DebugState, Engine, EngineConfig, EngineError, SessionState, SessionStatus, TutorReply};
pub use metrics::{AblationTable, MetricsReport};
pub use model::{Decode, Model, ModelConfig, ModelOutputs, ModelParams, ReplyModel, StructuredReply};
pub use scalar::Scalar;
pub use text::Vocab;
pub use trainer::{Ablation, LossBreakdown, TrainConfig};
