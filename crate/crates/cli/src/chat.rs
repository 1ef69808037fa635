//! Terminal chat: one student line in, one tutor reply out.

use std::io::{self, BufRead, Write};

use anyhow::{anyhow, Context, Result};
use tutorbot_core::corpus::read_curricula;
use tutorbot_core::engine::debug_snapshot;
use tutorbot_core::{
    DebugState, DialCode, Engine, EngineConfig, Model, ReplyModel, SessionState, SessionStatus,
    TutorReply,
};

use crate::{decode, ChatArgs};

pub fn run(args: ChatArgs) -> Result<()> {
    let curricula = read_curricula(&args.data)
        .with_context(|| format!("reading curricula from {}", args.data.display()))?;
    let curriculum = curricula
        .into_iter()
        .find(|c| c.id == args.curriculum)
        .ok_or_else(|| anyhow!("unknown curriculum {:?} in {}", args.curriculum, args.data.display()))?;
    let model = Model::load(&args.ckpt)
        .with_context(|| format!("loading checkpoint {}", args.ckpt.display()))?;
    let config = EngineConfig {
        max_turns_per_instruction: args.max_turns as usize,
        decode: decode(args.beam),
        ..EngineConfig::default()
    };
    let engine = Engine::new(&model, config)?;
    let (mut state, opening) = engine.start_session("terminal", curriculum)?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    repl(&engine, &mut state, &opening, stdin.lock(), stdout.lock())
}

fn badge(code: DialCode) -> &'static str {
    match code {
        DialCode::Correction => "[correction]",
        DialCode::Confirmation => "[confirmation]",
        DialCode::Others => "[ ]",
    }
}

fn banner(out: &mut impl Write, state: &SessionState) -> io::Result<()> {
    let n = state.curriculum.len();
    writeln!(
        out,
        "=== instruction {}/{}: {} ===",
        state.current_index + 1,
        n,
        state.current_instruction()
    )
}

fn print_reply(out: &mut impl Write, state: &SessionState, reply: &TutorReply) -> io::Result<()> {
    writeln!(out, "tutor {} {}", badge(reply.dial_code), reply.text)?;
    if reply.session_status == SessionStatus::Completed {
        writeln!(out, "=== lesson complete ===")?;
    } else if reply.transitioned {
        if reply.forced {
            writeln!(out, "(turn limit reached, moving on)")?;
        }
        banner(out, state)?;
    }
    Ok(())
}

fn print_debug(out: &mut impl Write, debug: &DebugState) -> io::Result<()> {
    writeln!(
        out,
        "{:>4}  {:<14}{:<14}{:>7}{:>7}{:>8}  flags",
        "turn", "dial", "inst", "global", "engine", "local"
    )?;
    for (i, e) in debug.history.iter().enumerate() {
        let mut flags = Vec::new();
        if e.diverged {
            flags.push("diverged");
        }
        if e.forced {
            flags.push("forced");
        }
        if e.suppressed {
            flags.push("suppressed");
        }
        writeln!(
            out,
            "{:>4}  {:<14}{:<14}{:>7}{:>7}{:>8.3}  {}",
            i,
            e.dial_code.token(),
            e.inst_code.token(),
            e.global_pred,
            e.engine_index,
            e.local_pred,
            flags.join(",")
        )?;
    }
    writeln!(
        out,
        "engine index {}, forced {}, suppressed {}",
        debug.engine_true_index, debug.forced_transition_count, debug.suppressed_transition_count
    )
}

fn repl<M: ReplyModel>(
    engine: &Engine<M>,
    state: &mut SessionState,
    opening: &TutorReply,
    input: impl BufRead,
    mut out: impl Write,
) -> Result<()> {
    writeln!(out, "lesson {} ({} instructions); /debug shows state, /quit exits", state.curriculum.id, state.curriculum.len())?;
    banner(&mut out, state)?;
    print_reply(&mut out, state, opening)?;
    write!(out, "> ")?;
    out.flush()?;
    for line in input.lines() {
        let line = line?;
        match line.trim() {
            "" => {}
            "/quit" => break,
            "/debug" => print_debug(&mut out, &debug_snapshot(state))?,
            text => {
                let reply = engine.student_turn(state, text)?;
                print_reply(&mut out, state, &reply)?;
                if reply.session_status == SessionStatus::Completed {
                    return Ok(());
                }
            }
        }
        write!(out, "> ")?;
        out.flush()?;
    }
    writeln!(out)?;
    Ok(())
}
