//! Word-level codec, vocabulary and the source/target token layouts.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedExample, Corpus, DialCode, InstCode, Role};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SEP: u32 = 4;
pub const TUTOR: u32 = 5;
pub const STUDENT: u32 = 6;
pub const INST: u32 = 7;
pub const CORRECTION: u32 = 8;
pub const CONFIRMATION: u32 = 9;
pub const OTHERS: u32 = 10;
pub const TRANSITION: u32 = 11;
pub const CONTINUE: u32 = 12;

pub const SPECIALS: [&str; 13] = [
    "<pad>",
    "<bos>",
    "<eos>",
    "<unk>",
    "<sep>",
    "<tutor>",
    "<student>",
    "<inst>",
    "[Correction]",
    "[Confirmation]",
    "[Others]",
    "[Transition]",
    "[Continue]",
];

pub const DIAL_CODE_IDS: [u32; 3] = [CORRECTION, CONFIRMATION, OTHERS];
pub const INST_CODE_IDS: [u32; 2] = [TRANSITION, CONTINUE];

pub fn is_code_id(id: u32) -> bool {
    (CORRECTION..=CONTINUE).contains(&id)
}

pub fn is_code_token(token: &str) -> bool {
    SPECIALS[CORRECTION as usize..=CONTINUE as usize].contains(&token)
}

pub fn dial_code_id(code: DialCode) -> u32 {
    match code {
        DialCode::Correction => CORRECTION,
        DialCode::Confirmation => CONFIRMATION,
        DialCode::Others => OTHERS,
    }
}

pub fn inst_code_id(code: InstCode) -> u32 {
    match code {
        InstCode::Transition => TRANSITION,
        InstCode::Continue => CONTINUE,
    }
}

pub fn dial_code_from_id(id: u32) -> Option<DialCode> {
    match id {
        CORRECTION => Some(DialCode::Correction),
        CONFIRMATION => Some(DialCode::Confirmation),
        OTHERS => Some(DialCode::Others),
        _ => None,
    }
}

pub fn inst_code_from_id(id: u32) -> Option<InstCode> {
    match id {
        TRANSITION => Some(InstCode::Transition),
        CONTINUE => Some(InstCode::Continue),
        _ => None,
    }
}

const CLOSING_PUNCT: &[char] = &['.', ',', '!', '?', ':', ';'];

fn is_closing(token: &str) -> bool {
    token.chars().count() == 1 && token.starts_with(CLOSING_PUNCT)
}

/// Splits on whitespace and peels closing punctuation into separate tokens.
/// Apostrophes inside a word stay part of it ("let's").
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = chunk;
        let mut trailing = Vec::new();
        while let Some(c) = word.chars().last() {
            if CLOSING_PUNCT.contains(&c) && word.len() > c.len_utf8() {
                trailing.push(c.to_string());
                word = &word[..word.len() - c.len_utf8()];
            } else {
                break;
            }
        }
        out.push(word.to_string());
        out.extend(trailing.into_iter().rev());
    }
    out
}

/// Inverse of [`tokenize`] for canonical text: single spaces between words,
/// closing punctuation attached to the preceding word.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for t in tokens {
        let t = t.as_ref();
        if !out.is_empty() && !is_closing(t) {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRecord", into = "VocabRecord")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabRecord {
    tokens: Vec<String>,
}

impl From<VocabRecord> for Vocab {
    fn from(r: VocabRecord) -> Self {
        Vocab::from_tokens(r.tokens)
    }
}

impl From<Vocab> for VocabRecord {
    fn from(v: Vocab) -> Self {
        VocabRecord { tokens: v.tokens }
    }
}

impl Vocab {
    /// Builds a vocabulary whose first entries are exactly [`SPECIALS`].
    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for w in words {
            if !SPECIALS.contains(&w.as_str()) {
                tokens.push(w);
            }
        }
        Vocab::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let mut seen = HashMap::new();
        let mut unique = Vec::with_capacity(tokens.len());
        for t in tokens {
            if !seen.contains_key(&t) {
                seen.insert(t.clone(), unique.len() as u32);
                unique.push(t);
            }
        }
        Self {
            tokens: unique,
            index: seen,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(SPECIALS[UNK as usize])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Decodes ids back to text, skipping specials other than UNK.
    pub fn decode(&self, ids: &[u32]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&id| id == UNK || id as usize >= SPECIALS.len())
            .map(|&id| self.token(id))
            .collect();
        detokenize(&words)
    }
}

/// Word-level vocabulary over every instruction and turn of the corpus.
/// Words seen fewer than `min_freq` times are left out and encode to UNK.
pub fn build_vocab(corpus: &Corpus, min_freq: usize) -> Vocab {
    let texts = corpus
        .curricula
        .iter()
        .flat_map(|c| c.instructions.iter().map(|i| i.text.as_str()))
        .chain(
            corpus
                .dialogues
                .iter()
                .flat_map(|d| d.turns.iter().map(|t| t.text.as_str())),
        );
    build_vocab_from_texts(texts, min_freq)
}

pub fn build_vocab_from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I, min_freq: usize) -> Vocab {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for t in tokenize(text) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut words: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_freq.max(1))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocab::from_words(words.into_iter().map(|(w, _)| w))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TextError {
    #[error("instruction needs {needed} source tokens but max_src_len is {max}")]
    InstructionTooLong { needed: usize, max: usize },
}

fn role_marker(role: Role) -> u32 {
    match role {
        Role::Tutor => TUTOR,
        Role::Student => STUDENT,
    }
}

/// Source layout: `INST instruction SEP (role turn)*`.
///
/// Turns are dropped oldest-first to fit `max_src_len`; the instruction is
/// never truncated. If even the newest turn does not fit, its leading tokens
/// are cut so the marker and the end of the turn remain.
pub fn build_source(
    context: &[(Role, String)],
    instruction: &str,
    vocab: &Vocab,
    max_src_len: usize,
) -> Result<Vec<u32>, TextError> {
    let mut head = vec![INST];
    head.extend(vocab.encode(instruction));
    head.push(SEP);
    if head.len() > max_src_len {
        return Err(TextError::InstructionTooLong {
            needed: head.len(),
            max: max_src_len,
        });
    }
    let mut budget = max_src_len - head.len();
    let mut segments: Vec<Vec<u32>> = Vec::new();
    for (role, text) in context.iter().rev() {
        let body = vocab.encode(text);
        if body.len() < budget {
            budget -= body.len() + 1;
            let mut seg = vec![role_marker(*role)];
            seg.extend(body);
            segments.push(seg);
        } else {
            if segments.is_empty() && budget > 0 {
                let mut seg = vec![role_marker(*role)];
                seg.extend_from_slice(&body[body.len() - (budget - 1)..]);
                segments.push(seg);
            }
            break;
        }
    }
    for seg in segments.into_iter().rev() {
        head.extend(seg);
    }
    Ok(head)
}

/// Target layout: `BOS dial inst response EOS`, or `BOS response EOS` without codes.
pub fn build_target(
    dial: DialCode,
    inst: InstCode,
    response: &str,
    vocab: &Vocab,
    with_codes: bool,
) -> Vec<u32> {
    let mut ids = vec![BOS];
    if with_codes {
        ids.push(dial_code_id(dial));
        ids.push(inst_code_id(inst));
    }
    ids.extend(vocab.encode(response));
    ids.push(EOS);
    ids
}

pub fn build_example_target(example: &AnnotatedExample, vocab: &Vocab, with_codes: bool) -> Vec<u32> {
    build_target(
        example.dial_code,
        example.inst_code,
        &example.target_response,
        vocab,
        with_codes,
    )
}

/// The most recent `max_turns` turns of a context.
pub fn context_window(context: &[(Role, String)], max_turns: usize) -> &[(Role, String)] {
    &context[context.len().saturating_sub(max_turns)..]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};
    use proptest::prelude::*;

    fn vocab_of(texts: &[&str]) -> Vocab {
        build_vocab_from_texts(texts.iter().copied(), 1)
    }

    #[test]
    fn specials_occupy_fixed_ids() {
        let v = vocab_of(&["hello world"]);
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(v.id(s), i as u32);
        }
        assert_eq!(v.len(), SPECIALS.len() + 2);
        assert_eq!(v.token(TRANSITION), "[Transition]");
    }

    #[test]
    fn hello_world_round_trip() {
        let v = vocab_of(&["hello world"]);
        let ids = v.encode("hello world");
        assert_eq!(ids.len(), 2);
        assert_eq!(v.decode(&ids), "hello world");
        assert_eq!(v.encode("hello moon")[1], UNK);
    }

    #[test]
    fn min_freq_drops_rare_words() {
        let v = build_vocab_from_texts(["a a b"], 2);
        assert_eq!(v.id("a"), SPECIALS.len() as u32);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn punctuation_is_split_and_reattached() {
        let text = "Hello! Welcome to today's lesson. Say went, not goed.";
        let toks = tokenize(text);
        assert_eq!(toks[..3], ["Hello", "!", "Welcome"]);
        assert!(toks.contains(&"today's".to_string()));
        assert_eq!(detokenize(&toks), text);
    }

    #[test]
    fn generated_corpus_text_round_trips() {
        let corpus = generate_corpus(&CorpusConfig {
            n_dialogues: 10,
            ..CorpusConfig::default()
        })
        .unwrap();
        let v = build_vocab(&corpus, 1);
        for t in corpus.dialogues.iter().flat_map(|d| &d.turns) {
            assert_eq!(v.decode(&v.encode(&t.text)), t.text);
        }
    }

    #[test]
    fn source_layout_and_truncation() {
        let v = vocab_of(&["read this now please ok"]);
        let src = build_source(&[], "read this", &v, 16).unwrap();
        assert_eq!(src, vec![INST, v.id("read"), v.id("this"), SEP]);

        let context: Vec<(Role, String)> = (0..100)
            .map(|i| {
                let role = if i % 2 == 0 { Role::Tutor } else { Role::Student };
                (role, format!("now please ok {i}"))
            })
            .collect();
        let src = build_source(&context, "read this", &v, 40).unwrap();
        assert!(src.len() <= 40);
        assert_eq!(&src[..4], &[INST, v.id("read"), v.id("this"), SEP]);
        // newest turn (student, index 99) sits at the end
        let tail = &src[src.len() - 5..];
        assert_eq!(tail[0], STUDENT);
        assert_eq!(build_source(&context, "read this", &v, 40).unwrap(), src);

        assert!(matches!(
            build_source(&[], "read this now please ok", &v, 4),
            Err(TextError::InstructionTooLong { needed: 7, max: 4 })
        ));
    }

    #[test]
    fn newest_turn_survives_tight_budget() {
        let v = vocab_of(&["a b c d e f g h"]);
        let ctx = vec![(Role::Student, "a b c d e f g h".to_string())];
        let src = build_source(&ctx, "a", &v, 7).unwrap();
        assert_eq!(src.len(), 7);
        assert_eq!(src[3], STUDENT);
        assert_eq!(src[6], v.id("h"));
    }

    #[test]
    fn target_layout() {
        let v = vocab_of(&["good job let's move on"]);
        let t = build_target(DialCode::Confirmation, InstCode::Continue, "good job", &v, true);
        assert_eq!(t, vec![BOS, CONFIRMATION, CONTINUE, v.id("good"), v.id("job"), EOS]);
        let t = build_target(DialCode::Others, InstCode::Transition, "let's move on", &v, true);
        assert_eq!(t[2], TRANSITION);
        assert_eq!(t.len(), 3 + 4);
        let plain = build_target(DialCode::Others, InstCode::Transition, "let's move on", &v, false);
        assert_eq!(plain.len(), t.len() - 2);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(words in proptest::collection::vec("[a-z]{1,6}", 1..12), punct in proptest::collection::vec(proptest::option::of("[.,!?]"), 12)) {
            let mut text = String::new();
            for (i, w) in words.iter().enumerate() {
                if i > 0 { text.push(' '); }
                text.push_str(w);
                if let Some(p) = &punct[i] { text.push_str(p); }
            }
            let v = build_vocab_from_texts([text.as_str()], 1);
            prop_assert_eq!(v.decode(&v.encode(&text)), text);
        }
    }
}
