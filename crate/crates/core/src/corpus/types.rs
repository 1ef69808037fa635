use std::fmt;

use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstructionKind {
    ReadAloud,
    QuestionAnswer,
    Debate,
    Vocabulary,
    Roleplay,
}

impl InstructionKind {
    pub const ALL: [InstructionKind; 5] = [
        InstructionKind::ReadAloud,
        InstructionKind::QuestionAnswer,
        InstructionKind::Debate,
        InstructionKind::Vocabulary,
        InstructionKind::Roleplay,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub id: String,
    pub text: String,
    pub kind: InstructionKind,
    /// Scripted block length in turns.
    pub target_turns: u32,
}

impl Instruction {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.text.trim().is_empty() {
            return Err(CorpusError::Invalid(format!(
                "instruction {} has empty text",
                self.id
            )));
        }
        if self.target_turns < 2 || self.target_turns % 2 != 0 {
            return Err(CorpusError::Invalid(format!(
                "instruction {} has target_turns {}, expected an even number >= 2",
                self.id, self.target_turns
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Curriculum {
    pub id: String,
    pub instructions: Vec<Instruction>,
}

impl Curriculum {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Checks the curriculum against the size of the model's global head.
    pub fn validate(&self, max_instructions: usize) -> Result<(), CorpusError> {
        if self.instructions.is_empty() || self.instructions.len() > max_instructions {
            return Err(CorpusError::Invalid(format!(
                "curriculum {} has {} instructions, expected 1..={}",
                self.id,
                self.instructions.len(),
                max_instructions
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for inst in &self.instructions {
            inst.validate()?;
            if !seen.insert(inst.id.as_str()) {
                return Err(CorpusError::Invalid(format!(
                    "curriculum {} repeats instruction id {}",
                    self.id, inst.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Tutor,
    Student,
}

/// Dialogue action code: the educational feedback carried by a tutor turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DialCode {
    Correction,
    Confirmation,
    Others,
}

impl DialCode {
    pub const ALL: [DialCode; 3] = [DialCode::Correction, DialCode::Confirmation, DialCode::Others];

    pub fn token(self) -> &'static str {
        match self {
            DialCode::Correction => "[Correction]",
            DialCode::Confirmation => "[Confirmation]",
            DialCode::Others => "[Others]",
        }
    }
}

impl fmt::Display for DialCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DialCode::Correction => "Correction",
            DialCode::Confirmation => "Confirmation",
            DialCode::Others => "Others",
        })
    }
}

/// Instruction action code: whether the tutor moves on to the next instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstCode {
    Transition,
    Continue,
}

impl InstCode {
    pub const ALL: [InstCode; 2] = [InstCode::Transition, InstCode::Continue];

    pub fn token(self) -> &'static str {
        match self {
            InstCode::Transition => "[Transition]",
            InstCode::Continue => "[Continue]",
        }
    }
}

impl fmt::Display for InstCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InstCode::Transition => "Transition",
            InstCode::Continue => "Continue",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    pub instruction_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dial_code: Option<DialCode>,
    #[serde(default)]
    pub is_transition: bool,
}

impl Turn {
    pub fn tutor(text: impl Into<String>, index: usize, code: DialCode, transition: bool) -> Self {
        Self {
            role: Role::Tutor,
            text: text.into(),
            instruction_index: index,
            dial_code: Some(code),
            is_transition: transition,
        }
    }

    pub fn student(text: impl Into<String>, index: usize) -> Self {
        Self {
            role: Role::Student,
            text: text.into(),
            instruction_index: index,
            dial_code: None,
            is_transition: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedDialogue {
    pub id: String,
    pub curriculum_id: String,
    pub turns: Vec<Turn>,
}

impl AlignedDialogue {
    /// Checks every structural invariant against a curriculum of `n` instructions.
    pub fn validate(&self, n: usize) -> Result<(), CorpusError> {
        let err = |msg: String| Err(CorpusError::Alignment(format!("dialogue {}: {msg}", self.id)));
        let Some(first) = self.turns.first() else {
            return err("no turns".into());
        };
        if first.role != Role::Tutor {
            return err("first turn is not the tutor".into());
        }
        if first.instruction_index != 0 {
            return err("first turn is not aligned with instruction 0".into());
        }
        for (i, pair) in self.turns.windows(2).enumerate() {
            if pair[0].role == pair[1].role {
                return err(format!("turns {} and {} share a role", i, i + 1));
            }
            let (a, b) = (pair[0].instruction_index, pair[1].instruction_index);
            if b < a || b > a + 1 {
                return err(format!("instruction index jumps from {a} to {b} at turn {}", i + 1));
            }
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.text.trim().is_empty() {
                return err(format!("turn {i} has empty text"));
            }
            if t.role == Role::Student && (t.dial_code.is_some() || t.is_transition) {
                return err(format!("student turn {i} carries tutor codes"));
            }
            if t.role == Role::Tutor && t.dial_code.is_none() {
                return err(format!("tutor turn {i} has no dial_code"));
            }
        }
        let last_index = self.turns.last().map(|t| t.instruction_index).unwrap_or(0);
        if last_index + 1 != n {
            return err(format!("covers {} instructions, curriculum has {n}", last_index + 1));
        }
        let transitions = self.turns.iter().filter(|t| t.is_transition).count();
        if transitions != n {
            return err(format!("{transitions} transition turns for {n} instructions"));
        }
        for (i, t) in self.turns.iter().enumerate() {
            let last_tutor_of_block = t.role == Role::Tutor
                && !self.turns[i + 1..]
                    .iter()
                    .any(|u| u.role == Role::Tutor && u.instruction_index == t.instruction_index);
            if t.is_transition != last_tutor_of_block {
                return err(format!("turn {i} has a misplaced transition flag"));
            }
        }
        Ok(())
    }
}

/// One training unit cut from an annotated dialogue at a tutor turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub context: Vec<(Role, String)>,
    pub instruction_text: String,
    pub target_response: String,
    pub dial_code: DialCode,
    pub inst_code: InstCode,
    pub global_label: usize,
    pub local_label: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhraseBankProfile {
    /// One phrasing per slot, short blocks.
    Minimal,
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_dialogues: usize,
    pub n_instructions_per_curriculum: usize,
    pub n_curricula: usize,
    pub noise_rate: f64,
    pub seed: u64,
    pub phrase_bank_profile: PhraseBankProfile,
    /// Overrides the per-kind block length when set.
    #[serde(default)]
    pub target_turns: Option<u32>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_dialogues: 200,
            n_instructions_per_curriculum: 5,
            n_curricula: 4,
            noise_rate: 0.1,
            seed: 42,
            phrase_bank_profile: PhraseBankProfile::Standard,
            target_turns: None,
        }
    }
}

/// Largest curriculum the generator will produce; matches the default global head size.
pub const MAX_SUPPORTED_INSTRUCTIONS: usize = 16;

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.n_dialogues == 0 {
            return Err(CorpusError::Config("n_dialogues must be at least 1".into()));
        }
        if self.n_curricula == 0 {
            return Err(CorpusError::Config("n_curricula must be at least 1".into()));
        }
        if self.n_instructions_per_curriculum == 0
            || self.n_instructions_per_curriculum > MAX_SUPPORTED_INSTRUCTIONS
        {
            return Err(CorpusError::Config(format!(
                "n_instructions_per_curriculum must be in 1..={MAX_SUPPORTED_INSTRUCTIONS}, got {}",
                self.n_instructions_per_curriculum
            )));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(CorpusError::Config(format!(
                "noise_rate must be in [0, 1), got {}",
                self.noise_rate
            )));
        }
        if let Some(t) = self.target_turns {
            if t < 2 || t % 2 != 0 {
                return Err(CorpusError::Config(format!(
                    "target_turns must be an even number >= 2, got {t}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub curricula: Vec<Curriculum>,
    pub dialogues: Vec<AlignedDialogue>,
}

impl Corpus {
    pub fn curriculum(&self, id: &str) -> Option<&Curriculum> {
        self.curricula.iter().find(|c| c.id == id)
    }

    pub fn utterance_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }

    pub fn mean_turns(&self) -> f64 {
        if self.dialogues.is_empty() {
            return 0.0;
        }
        self.utterance_count() as f64 / self.dialogues.len() as f64
    }

    /// A corpus holding only `dialogues` but the same curricula and config.
    pub fn with_dialogues(&self, dialogues: Vec<AlignedDialogue>) -> Corpus {
        Corpus {
            config: self.config.clone(),
            curricula: self.curricula.clone(),
            dialogues,
        }
    }
}
