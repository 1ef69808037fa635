use serde::{Deserialize, Serialize};

use super::types::*;
use super::CorpusError;

/// Cue phrases used to label tutor feedback from the tutor's own words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackLexicon {
    pub correction: Vec<String>,
    pub praise: Vec<String>,
}

impl Default for FeedbackLexicon {
    fn default() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            correction: own(&[
                "not quite",
                "try again",
                "instead of",
                "the correct form is",
                "you should say",
            ]),
            praise: own(&[
                "great job",
                "good job",
                "well done",
                "excellent",
                "that's right",
                "perfect",
                "nice work",
            ]),
        }
    }
}

impl FeedbackLexicon {
    /// Correction cues win over praise; anything else is `Others`.
    pub fn classify(&self, text: &str) -> DialCode {
        let lower = text.to_lowercase().replace('\u{2019}', "'");
        if self.correction.iter().any(|c| lower.contains(c.as_str())) {
            DialCode::Correction
        } else if self.praise.iter().any(|c| lower.contains(c.as_str())) {
            DialCode::Confirmation
        } else {
            DialCode::Others
        }
    }
}

/// Cuts one [`AnnotatedExample`] per tutor turn.
///
/// The local label is the tutor turn's 1-based position within its
/// instruction block divided by the block's length, counting both roles.
pub fn annotate_dialogue(
    dialogue: &AlignedDialogue,
    curriculum: &Curriculum,
    lexicon: &FeedbackLexicon,
) -> Result<Vec<AnnotatedExample>, CorpusError> {
    if dialogue.curriculum_id != curriculum.id {
        return Err(CorpusError::Alignment(format!(
            "dialogue {} belongs to curriculum {}, not {}",
            dialogue.id, dialogue.curriculum_id, curriculum.id
        )));
    }
    for pair in dialogue.turns.windows(2) {
        if pair[1].instruction_index < pair[0].instruction_index {
            return Err(CorpusError::Alignment(format!(
                "dialogue {}: instruction index decreases from {} to {}",
                dialogue.id, pair[0].instruction_index, pair[1].instruction_index
            )));
        }
    }
    if let Some(t) = dialogue
        .turns
        .iter()
        .find(|t| t.instruction_index >= curriculum.len())
    {
        return Err(CorpusError::Alignment(format!(
            "dialogue {}: instruction index {} outside curriculum of {}",
            dialogue.id,
            t.instruction_index,
            curriculum.len()
        )));
    }

    let mut block_lens = vec![0usize; curriculum.len()];
    for t in &dialogue.turns {
        block_lens[t.instruction_index] += 1;
    }

    let mut examples = Vec::new();
    let mut position = 0usize;
    let mut current = usize::MAX;
    for (k, turn) in dialogue.turns.iter().enumerate() {
        if turn.instruction_index != current {
            current = turn.instruction_index;
            position = 0;
        }
        position += 1;
        if turn.role != Role::Tutor {
            continue;
        }
        examples.push(AnnotatedExample {
            context: dialogue.turns[..k]
                .iter()
                .map(|t| (t.role, t.text.clone()))
                .collect(),
            instruction_text: curriculum.instructions[current].text.clone(),
            target_response: turn.text.clone(),
            dial_code: lexicon.classify(&turn.text),
            inst_code: if turn.is_transition {
                InstCode::Transition
            } else {
                InstCode::Continue
            },
            global_label: current,
            local_label: position as f64 / block_lens[current] as f64,
        });
    }
    Ok(examples)
}

/// Annotates every dialogue of a corpus, in order.
pub fn annotate_corpus(
    corpus: &Corpus,
    lexicon: &FeedbackLexicon,
) -> Result<Vec<AnnotatedExample>, CorpusError> {
    let mut out = Vec::new();
    for d in &corpus.dialogues {
        let c = corpus.curriculum(&d.curriculum_id).ok_or_else(|| {
            CorpusError::Alignment(format!(
                "dialogue {} references unknown curriculum {}",
                d.id, d.curriculum_id
            ))
        })?;
        out.extend(annotate_dialogue(d, c, lexicon)?);
    }
    Ok(out)
}
