//! Append-only per-session event log and replay.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tutorbot_core::engine::{apply_reply, apply_student};
use tutorbot_core::{Curriculum, SessionState, SessionStatus, StructuredReply, TutorReply};

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Created {
        curriculum: Curriculum,
        max_turns_per_instruction: usize,
    },
    StudentTurn {
        text: String,
    },
    TutorTurn {
        reply: StructuredReply,
    },
    Transition {
        from: usize,
        to: usize,
    },
    ForcedTransition {
        from: usize,
        to: usize,
    },
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    pub seq: u64,
    #[serde(flatten)]
    pub body: EventBody,
    pub timestamp: DateTime<Utc>,
}

/// Events describing one applied tutor reply, in log order.
pub fn reply_events(prior_index: usize, raw: &StructuredReply, reply: &TutorReply) -> Vec<EventBody> {
    let mut out = vec![EventBody::TutorTurn { reply: raw.clone() }];
    if reply.transitioned && reply.session_status == SessionStatus::Active {
        let (from, to) = (prior_index, reply.instruction_index_after);
        out.push(if reply.forced {
            EventBody::ForcedTransition { from, to }
        } else {
            EventBody::Transition { from, to }
        });
    }
    if reply.session_status == SessionStatus::Completed {
        out.push(EventBody::Completed);
    }
    out
}

/// One JSONL file per session under `dir`.
#[derive(Debug, Clone)]
pub struct EventLog {
    dir: PathBuf,
}

impl EventLog {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| ServiceError::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn path(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}.jsonl"))
    }

    pub fn exists(&self, session_id: &str) -> bool {
        self.path(session_id).is_file()
    }

    /// Appends events with one write and syncs the file before returning.
    pub fn append(&self, events: &[SessionEvent]) -> Result<(), ServiceError> {
        let Some(first) = events.first() else {
            return Ok(());
        };
        let path = self.path(&first.session_id);
        let mut buf = Vec::new();
        for ev in events {
            serde_json::to_writer(&mut buf, ev).expect("event serialises");
            buf.push(b'\n');
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ServiceError::io(&path, e))?;
        file.write_all(&buf).map_err(|e| ServiceError::io(&path, e))?;
        file.sync_data().map_err(|e| ServiceError::io(&path, e))
    }

    /// Reads a session's events. A torn final line (crash mid-append) is
    /// dropped; corruption anywhere else is an error.
    pub fn read(&self, session_id: &str) -> Result<Vec<SessionEvent>, ServiceError> {
        Ok(self.scan(session_id)?.0)
    }

    /// Like [`read`](Self::read), but also cuts a torn final line off the
    /// file so later appends start on a clean line.
    pub fn recover(&self, session_id: &str) -> Result<Vec<SessionEvent>, ServiceError> {
        let (events, good_len, total_len) = self.scan(session_id)?;
        if good_len < total_len {
            let path = self.path(session_id);
            log::warn!("{}: truncating torn final event", path.display());
            let file = OpenOptions::new()
                .write(true)
                .open(&path)
                .map_err(|e| ServiceError::io(&path, e))?;
            file.set_len(good_len).map_err(|e| ServiceError::io(&path, e))?;
            file.sync_data().map_err(|e| ServiceError::io(&path, e))?;
        }
        Ok(events)
    }

    /// Events, byte length of the intact prefix, and file length.
    fn scan(&self, session_id: &str) -> Result<(Vec<SessionEvent>, u64, u64), ServiceError> {
        let path = self.path(session_id);
        let bytes = fs::read(&path).map_err(|e| ServiceError::io(&path, e))?;
        let mut events = Vec::new();
        let mut offset = 0usize;
        let mut line_no = 0usize;
        while offset < bytes.len() {
            line_no += 1;
            let (line, next, terminated) = match bytes[offset..].iter().position(|&b| b == b'\n') {
                Some(i) => (&bytes[offset..offset + i], offset + i + 1, true),
                None => (&bytes[offset..], bytes.len(), false),
            };
            if !terminated {
                // appends always end in a newline, so this write never finished
                return Ok((events, offset as u64, bytes.len() as u64));
            }
            let parsed = if line.iter().all(u8::is_ascii_whitespace) {
                None
            } else {
                Some(serde_json::from_slice::<SessionEvent>(line))
            };
            match parsed {
                Some(Ok(ev)) => events.push(ev),
                Some(Err(e)) if next == bytes.len() => {
                    log::warn!("{}: dropping torn final event: {e}", path.display());
                    return Ok((events, offset as u64, bytes.len() as u64));
                }
                Some(Err(e)) => {
                    return Err(ServiceError::Log(format!("{}:{line_no}: {e}", path.display())))
                }
                None => {}
            }
            offset = next;
        }
        Ok((events, bytes.len() as u64, bytes.len() as u64))
    }
}

/// Rebuilds a session from its events.
///
/// Returns the state and the sequence number the next event should use. A
/// trailing student turn without its tutor reply is ignored: the request
/// that wrote it never completed.
pub fn replay(events: &[SessionEvent]) -> Result<(SessionState, u64), ServiceError> {
    let bad = |msg: String| ServiceError::Log(msg);
    let (first, rest) = events
        .split_first()
        .ok_or_else(|| bad("empty event log".into()))?;
    let (mut state, cap) = match &first.body {
        EventBody::Created {
            curriculum,
            max_turns_per_instruction,
        } => (
            SessionState::new(first.session_id.clone(), curriculum.clone()),
            *max_turns_per_instruction,
        ),
        other => return Err(bad(format!("log starts with {other:?}, not created"))),
    };
    let mut last_seq = first.seq;
    let mut pending: Option<&str> = None;
    for ev in rest {
        if ev.seq <= last_seq {
            return Err(bad(format!("sequence {} after {}", ev.seq, last_seq)));
        }
        last_seq = ev.seq;
        match &ev.body {
            EventBody::StudentTurn { text } => pending = Some(text),
            EventBody::TutorTurn { reply } => {
                if let Some(text) = pending.take() {
                    apply_student(&mut state, text).map_err(|e| bad(e.to_string()))?;
                }
                apply_reply(&mut state, reply, cap).map_err(|e| bad(e.to_string()))?;
            }
            EventBody::Transition { to, .. } | EventBody::ForcedTransition { to, .. } => {
                if state.current_index != *to {
                    return Err(bad(format!(
                        "logged transition to {to} but replay is at {}",
                        state.current_index
                    )));
                }
            }
            EventBody::Completed => {
                if state.status != SessionStatus::Completed {
                    return Err(bad("logged completion but replay is still active".into()));
                }
            }
            EventBody::Created { .. } => return Err(bad("second created event".into())),
        }
    }
    Ok((state, last_seq + 1))
}
