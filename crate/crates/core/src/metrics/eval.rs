use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::bleu::bleu_1_to_4;
use super::MetricsError;
use crate::corpus::{AnnotatedExample, InstCode, Role};
use crate::model::{Decode, ModelError, ReplyModel, StructuredReply};
use crate::text::tokenize;

/// Test-set metrics. Code metrics are `None` for models trained without
/// action codes, progress metrics `None` without progress heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    /// Generated vs gold instruction code, over all examples.
    pub transition_accuracy: Option<f64>,
    /// Same, restricted to examples whose gold code is a transition.
    pub boundary_transition_accuracy: Option<f64>,
    pub dial_code_accuracy: Option<f64>,
    pub global_accuracy: Option<f64>,
    pub local_mse: Option<f64>,
    pub n_examples: usize,
}

impl MetricsReport {
    pub fn bleu(&self) -> [f64; 4] {
        [self.bleu_1, self.bleu_2, self.bleu_3, self.bleu_4]
    }
}

/// Scores a model on annotated examples with gold context and instruction.
pub fn evaluate<M: ReplyModel + ?Sized>(
    model: &M,
    examples: &[AnnotatedExample],
    decode: Decode,
) -> Result<MetricsReport, MetricsError> {
    if examples.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut hyps = Vec::with_capacity(examples.len());
    let mut refs = Vec::with_capacity(examples.len());
    let (mut inst_ok, mut dial_ok, mut global_ok) = (0usize, 0usize, 0usize);
    let (mut boundary, mut boundary_ok) = (0usize, 0usize);
    let mut sq_err = 0.0;
    for ex in examples {
        let reply = model.reply(&ex.context, &ex.instruction_text, decode)?;
        hyps.push(tokenize(&reply.response_text));
        refs.push(tokenize(&ex.target_response));
        let inst_match = reply.inst_code == ex.inst_code;
        inst_ok += inst_match as usize;
        if ex.inst_code == InstCode::Transition {
            boundary += 1;
            boundary_ok += inst_match as usize;
        }
        dial_ok += (reply.dial_code == ex.dial_code) as usize;
        global_ok += (reply.global_pred == ex.global_label) as usize;
        sq_err += (reply.local_pred - ex.local_label).powi(2);
    }
    let n = examples.len() as f64;
    let [b1, b2, b3, b4] = bleu_1_to_4(&hyps, &refs)?;
    let codes = model.with_codes();
    let progress = model.with_progress();
    Ok(MetricsReport {
        bleu_1: b1,
        bleu_2: b2,
        bleu_3: b3,
        bleu_4: b4,
        transition_accuracy: codes.then(|| inst_ok as f64 / n),
        boundary_transition_accuracy: (codes && boundary > 0)
            .then(|| boundary_ok as f64 / boundary as f64),
        dial_code_accuracy: codes.then(|| dial_ok as f64 / n),
        global_accuracy: progress.then(|| global_ok as f64 / n),
        local_mse: progress.then(|| sq_err / n),
        n_examples: examples.len(),
    })
}

/// Fraction of examples whose gold instruction code is the majority code.
pub fn majority_transition_rate(examples: &[AnnotatedExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let transitions = examples
        .iter()
        .filter(|e| e.inst_code == InstCode::Transition)
        .count();
    let n = examples.len();
    transitions.max(n - transitions) as f64 / n as f64
}

type OracleKey = (Vec<(Role, String)>, String);

/// A fixture model that replays the gold target of every example it was
/// built from.
#[derive(Debug, Clone, Default)]
pub struct OracleModel {
    replies: HashMap<OracleKey, StructuredReply>,
    max_instructions: usize,
}

impl OracleModel {
    pub fn new(examples: &[AnnotatedExample], max_instructions: usize) -> Self {
        let mut replies = HashMap::new();
        for ex in examples {
            replies
                .entry((ex.context.clone(), ex.instruction_text.clone()))
                .or_insert_with(|| StructuredReply {
                    dial_code: ex.dial_code,
                    inst_code: ex.inst_code,
                    response_text: ex.target_response.clone(),
                    global_pred: ex.global_label,
                    local_pred: ex.local_label,
                    token_ids: Vec::new(),
                });
        }
        Self {
            replies,
            max_instructions,
        }
    }
}

impl ReplyModel for OracleModel {
    fn max_instructions(&self) -> usize {
        self.max_instructions
    }

    fn with_codes(&self) -> bool {
        true
    }

    fn with_progress(&self) -> bool {
        true
    }

    fn reply(
        &self,
        context: &[(Role, String)],
        instruction: &str,
        _decode: Decode,
    ) -> Result<StructuredReply, ModelError> {
        self.replies
            .get(&(context.to_vec(), instruction.to_string()))
            .cloned()
            .ok_or_else(|| ModelError::Shape("oracle has no reply for this context".into()))
    }
}
