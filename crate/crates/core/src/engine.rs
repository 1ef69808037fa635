//! Session state machine around a reply model.
//!
//! State changes are split into pure `apply_*` steps so that a session can be
//! rebuilt exactly from a log of student texts and generated replies.

use serde::{Deserialize, Serialize};

use crate::corpus::{Curriculum, DialCode, InstCode, Role, Turn};
use crate::model::{Decode, ModelError, ReplyModel, StructuredReply};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Tutor replies allowed in one instruction block before a transition is forced.
    pub max_turns_per_instruction: usize,
    pub decode: Decode,
    pub max_context_turns: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_turns_per_instruction: 12,
            decode: Decode::Greedy,
            max_context_turns: 12,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_turns_per_instruction < 2 {
            return Err(EngineError::Config(format!(
                "max_turns_per_instruction must be at least 2, got {}",
                self.max_turns_per_instruction
            )));
        }
        if self.max_context_turns == 0 {
            return Err(EngineError::Config("max_context_turns must be positive".into()));
        }
        if let Decode::Beam(0) = self.decode {
            return Err(EngineError::Config("beam width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Active,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugEntry {
    pub dial_code: DialCode,
    /// The code as generated, before suppression or forcing.
    pub inst_code: InstCode,
    pub global_pred: usize,
    pub local_pred: f64,
    /// Instruction index the reply was generated for.
    pub engine_index: usize,
    pub diverged: bool,
    pub forced: bool,
    pub suppressed: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DebugState {
    pub history: Vec<DebugEntry>,
    pub engine_true_index: usize,
    pub forced_transition_count: usize,
    pub suppressed_transition_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub curriculum: Curriculum,
    pub current_index: usize,
    pub transcript: Vec<Turn>,
    /// Tutor replies generated in the current instruction block.
    pub turns_in_current_block: usize,
    pub status: SessionStatus,
    pub last_debug: DebugState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TutorReply {
    pub text: String,
    pub dial_code: DialCode,
    pub inst_code: InstCode,
    pub transitioned: bool,
    pub forced: bool,
    pub instruction_index_after: usize,
    pub global_pred: usize,
    pub local_pred: f64,
    pub session_status: SessionStatus,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error("curriculum has {n} instructions but the model supports at most {max}")]
    OversizedCurriculum { n: usize, max: usize },
    #[error("invalid curriculum: {0}")]
    Curriculum(String),
    #[error("session is already completed")]
    Completed,
    #[error("student text must not be empty")]
    EmptyText,
    #[error("expected a {expected} turn next")]
    OutOfOrder { expected: &'static str },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl SessionState {
    pub fn new(session_id: impl Into<String>, curriculum: Curriculum) -> Self {
        Self {
            session_id: session_id.into(),
            curriculum,
            current_index: 0,
            transcript: Vec::new(),
            turns_in_current_block: 0,
            status: SessionStatus::Active,
            last_debug: DebugState::default(),
        }
    }

    pub fn current_instruction(&self) -> &str {
        &self.curriculum.instructions[self.current_index].text
    }

    /// Most recent `max_turns` turns as model context.
    pub fn context(&self, max_turns: usize) -> Vec<(Role, String)> {
        let start = self.transcript.len().saturating_sub(max_turns);
        self.transcript[start..]
            .iter()
            .map(|t| (t.role, t.text.clone()))
            .collect()
    }

    /// Number of student turns so far.
    pub fn student_turns(&self) -> usize {
        self.transcript.iter().filter(|t| t.role == Role::Student).count()
    }
}

/// Appends a student turn. Fails on completed sessions, empty text, or when a
/// tutor reply is due.
pub fn apply_student(state: &mut SessionState, text: &str) -> Result<(), EngineError> {
    if state.status == SessionStatus::Completed {
        return Err(EngineError::Completed);
    }
    if text.trim().is_empty() {
        return Err(EngineError::EmptyText);
    }
    if state.transcript.last().map(|t| t.role) != Some(Role::Tutor) {
        return Err(EngineError::OutOfOrder { expected: "tutor" });
    }
    state
        .transcript
        .push(Turn::student(text.trim(), state.current_index));
    Ok(())
}

/// Applies a generated reply: records the tutor turn, then advances the
/// instruction on a generated or forced transition.
pub fn apply_reply(
    state: &mut SessionState,
    reply: &StructuredReply,
    cap: usize,
) -> Result<TutorReply, EngineError> {
    if state.status == SessionStatus::Completed {
        return Err(EngineError::Completed);
    }
    if state.transcript.last().map(|t| t.role) == Some(Role::Tutor) {
        return Err(EngineError::OutOfOrder { expected: "student" });
    }
    let opening = state.transcript.is_empty();
    let index = state.current_index;
    state.turns_in_current_block += 1;

    let generated = reply.inst_code == InstCode::Transition;
    let suppressed = opening && generated;
    if suppressed {
        log::warn!(
            "session {}: transition in the opening reply suppressed",
            state.session_id
        );
    }
    let model_transition = generated && !suppressed;
    let forced = !model_transition && state.turns_in_current_block >= cap;
    let transitioned = model_transition || forced;

    state.transcript.push(Turn::tutor(
        reply.response_text.clone(),
        index,
        reply.dial_code,
        transitioned,
    ));
    let debug = &mut state.last_debug;
    debug.history.push(DebugEntry {
        dial_code: reply.dial_code,
        inst_code: reply.inst_code,
        global_pred: reply.global_pred,
        local_pred: reply.local_pred,
        engine_index: index,
        diverged: reply.global_pred != index,
        forced,
        suppressed,
    });
    if forced {
        debug.forced_transition_count += 1;
    }
    if suppressed {
        debug.suppressed_transition_count += 1;
    }
    if transitioned {
        state.turns_in_current_block = 0;
        if index + 1 == state.curriculum.len() {
            state.status = SessionStatus::Completed;
        } else {
            state.current_index += 1;
        }
    }
    state.last_debug.engine_true_index = state.current_index;
    Ok(TutorReply {
        text: reply.response_text.clone(),
        dial_code: reply.dial_code,
        inst_code: if transitioned {
            InstCode::Transition
        } else {
            InstCode::Continue
        },
        transitioned,
        forced,
        instruction_index_after: state.current_index,
        global_pred: reply.global_pred,
        local_pred: reply.local_pred,
        session_status: state.status,
    })
}

/// Drives sessions with a shared, read-only reply model.
#[derive(Debug, Clone)]
pub struct Engine<M> {
    model: M,
    config: EngineConfig,
}

impl<M: ReplyModel> Engine<M> {
    pub fn new(model: M, config: EngineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Self { model, config })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn check_curriculum(&self, curriculum: &Curriculum) -> Result<(), EngineError> {
        let max = self.model.max_instructions();
        if curriculum.len() > max {
            return Err(EngineError::OversizedCurriculum {
                n: curriculum.len(),
                max,
            });
        }
        curriculum
            .validate(max)
            .map_err(|e| EngineError::Curriculum(e.to_string()))
    }

    /// Reply the model would give for the current state, without applying it.
    pub fn generate(&self, state: &SessionState) -> Result<StructuredReply, EngineError> {
        let context = state.context(self.config.max_context_turns);
        Ok(self
            .model
            .reply(&context, state.current_instruction(), self.config.decode)?)
    }

    pub fn start_session(
        &self,
        session_id: impl Into<String>,
        curriculum: Curriculum,
    ) -> Result<(SessionState, TutorReply), EngineError> {
        self.check_curriculum(&curriculum)?;
        let mut state = SessionState::new(session_id, curriculum);
        let reply = self.generate(&state)?;
        let out = apply_reply(&mut state, &reply, self.config.max_turns_per_instruction)?;
        Ok((state, out))
    }

    /// Handles one student turn and returns the tutor's reply together with
    /// the raw structured output it was derived from.
    pub fn student_turn_raw(
        &self,
        state: &mut SessionState,
        text: &str,
    ) -> Result<(TutorReply, StructuredReply), EngineError> {
        let mut next = state.clone();
        apply_student(&mut next, text)?;
        let raw = self.generate(&next)?;
        let reply = apply_reply(&mut next, &raw, self.config.max_turns_per_instruction)?;
        *state = next;
        Ok((reply, raw))
    }

    pub fn student_turn(&self, state: &mut SessionState, text: &str) -> Result<TutorReply, EngineError> {
        Ok(self.student_turn_raw(state, text)?.0)
    }
}

pub fn debug_snapshot(state: &SessionState) -> DebugState {
    state.last_debug.clone()
}
