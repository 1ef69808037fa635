//! Constrained decoding.
//!
//! The first generated position may only hold one of the three dialogue
//! codes, the second one of the two instruction codes, and later positions
//! any word or EOS. Models trained without code slots skip straight to words.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::forward::{decode_last, encode_only};
use super::params::Layout;
use super::{ModelConfig, ModelError, ModelParams};
use crate::corpus::{DialCode, InstCode};
use crate::text::{self, Vocab, BOS, EOS, SPECIALS};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind", content = "width")]
pub enum Decode {
    #[default]
    Greedy,
    Beam(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredReply {
    pub dial_code: DialCode,
    pub inst_code: InstCode,
    pub response_text: String,
    pub global_pred: usize,
    pub local_pred: f64,
    /// Generated ids after BOS, code slots included.
    #[serde(skip)]
    pub token_ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Dial,
    Inst,
    Word,
}

fn slot_at(step: usize, with_codes: bool) -> Slot {
    match (with_codes, step) {
        (true, 0) => Slot::Dial,
        (true, 1) => Slot::Inst,
        _ => Slot::Word,
    }
}

fn allowed(slot: Slot, id: u32) -> bool {
    match slot {
        Slot::Dial => text::DIAL_CODE_IDS.contains(&id),
        Slot::Inst => text::INST_CODE_IDS.contains(&id),
        Slot::Word => id == EOS || id == text::UNK || id as usize >= SPECIALS.len(),
    }
}

fn log_softmax_masked<F: Scalar>(logits: &Array1<F>, slot: Slot) -> Vec<(u32, f64)> {
    let candidates: Vec<(u32, f64)> = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(slot, *i as u32))
        .map(|(i, v)| (i as u32, v.to_f64c()))
        .collect();
    let max = candidates
        .iter()
        .map(|c| c.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max + candidates.iter().map(|c| (c.1 - max).exp()).sum::<f64>().ln();
    candidates.into_iter().map(|(i, v)| (i, v - lse)).collect()
}

fn argmax<F: Scalar>(v: &Array1<F>) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Generates a structured reply for an already-built source sequence.
pub fn generate_from_source<F: Scalar>(
    params: &ModelParams<F>,
    config: &ModelConfig,
    vocab: &Vocab,
    src: &[u32],
    decode: Decode,
    with_codes: bool,
) -> Result<StructuredReply, ModelError> {
    let layout = Layout::new(config);
    let encoded = encode_only(params, config, &layout, src)?;
    let max_steps = config.max_tgt_len.saturating_sub(1).max(if with_codes { 2 } else { 0 });
    let ids = match decode {
        Decode::Greedy => greedy(params, config, &layout, &encoded.memory, max_steps, with_codes),
        Decode::Beam(k) => beam(params, config, &layout, &encoded.memory, max_steps, with_codes, k.max(1)),
    };
    Ok(parse_reply(
        ids,
        vocab,
        with_codes,
        argmax(&encoded.global_logits),
        encoded.local_pred.to_f64c(),
    ))
}

fn parse_reply(ids: Vec<u32>, vocab: &Vocab, with_codes: bool, global_pred: usize, local_pred: f64) -> StructuredReply {
    let (dial_code, inst_code, words) = if with_codes {
        (
            text::dial_code_from_id(ids[0]).expect("constrained dial slot"),
            text::inst_code_from_id(ids[1]).expect("constrained inst slot"),
            &ids[2..],
        )
    } else {
        (DialCode::Others, InstCode::Continue, &ids[..])
    };
    let words: Vec<u32> = words.iter().copied().take_while(|&i| i != EOS).collect();
    StructuredReply {
        dial_code,
        inst_code,
        response_text: vocab.decode(&words),
        global_pred,
        local_pred,
        token_ids: ids,
    }
}

fn greedy<F: Scalar>(
    params: &ModelParams<F>,
    config: &ModelConfig,
    layout: &Layout,
    memory: &ndarray::Array2<F>,
    max_steps: usize,
    with_codes: bool,
) -> Vec<u32> {
    let mut prefix = vec![BOS];
    for step in 0..max_steps {
        let logits = decode_last(params, config, layout, memory, &prefix);
        let slot = slot_at(step, with_codes);
        let mut best: Option<(u32, F)> = None;
        for (i, &v) in logits.iter().enumerate() {
            if allowed(slot, i as u32) && best.map_or(true, |(_, b)| v > b) {
                best = Some((i as u32, v));
            }
        }
        let (id, _) = best.expect("every slot admits at least one token");
        prefix.push(id);
        if id == EOS {
            break;
        }
    }
    prefix.split_off(1)
}

fn beam<F: Scalar>(
    params: &ModelParams<F>,
    config: &ModelConfig,
    layout: &Layout,
    memory: &ndarray::Array2<F>,
    max_steps: usize,
    with_codes: bool,
    width: usize,
) -> Vec<u32> {
    let mut beams: Vec<(Vec<u32>, f64)> = vec![(vec![BOS], 0.0)];
    let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
    for step in 0..max_steps {
        let slot = slot_at(step, with_codes);
        let mut candidates: Vec<(Vec<u32>, f64)> = Vec::new();
        for (prefix, score) in &beams {
            let logits = decode_last(params, config, layout, memory, prefix);
            let mut scored = log_softmax_masked(&logits, slot);
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (id, lp) in scored.into_iter().take(width) {
                let mut next = prefix.clone();
                next.push(id);
                candidates.push((next, score + lp));
            }
        }
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
        beams.clear();
        for (seq, score) in candidates {
            if beams.len() >= width {
                break;
            }
            if *seq.last().unwrap() == EOS {
                finished.push((seq, score));
            } else {
                beams.push((seq, score));
            }
        }
        if beams.is_empty() {
            break;
        }
        let best_open = beams[0].1;
        if finished.len() >= width && finished.iter().all(|f| f.1 >= best_open) {
            break;
        }
    }
    finished.extend(beams);
    // the code slots must be filled even if a beam stopped early
    let min_len = if with_codes { 3 } else { 1 };
    finished.retain(|(seq, _)| seq.len() >= min_len);
    finished.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut best = finished.swap_remove(0).0;
    best.split_off(1)
}
