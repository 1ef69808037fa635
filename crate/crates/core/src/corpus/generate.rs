//! Templated synthetic tutoring dialogues.
//!
//! Each instruction block is scripted: the tutor's line at a given position is
//! a fixed template of the instruction kind, the position in the block and
//! whether the student's previous answer contained an error. Student answers
//! are drawn from sentence banks; an error answer swaps an irregular past-tense
//! verb for its regularised wrong form ("went" -> "goed").
//!
//! Block layout: the opening block starts with the tutor and ends with its
//! transition turn, so it holds `target_turns - 1` turns (at least 3). Every
//! later block starts with the student's reply to the previous closing line
//! and holds exactly `target_turns` turns. Every block therefore ends with the
//! tutor's transition turn.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::types::*;
use super::CorpusError;

/// Irregular verbs and the wrong forms synthetic students produce.
pub const ERROR_PAIRS: [(&str, &str); 8] = [
    ("went", "goed"),
    ("ate", "eated"),
    ("saw", "seed"),
    ("bought", "buyed"),
    ("took", "taked"),
    ("wrote", "writed"),
    ("ran", "runned"),
    ("made", "maked"),
];

const READ_SENTENCES: [(&str, usize); 8] = [
    ("Yesterday I {v} to the park with my sister.", 0),
    ("Last night we {v} pizza at home.", 1),
    ("This morning I {v} a rainbow over the school.", 2),
    ("On Sunday my dad {v} a new bike.", 3),
    ("Last week we {v} the bus to the museum.", 4),
    ("Two days ago she {v} a poem about the sea.", 5),
    ("After school he {v} to the library.", 6),
    ("Last summer they {v} a sand castle.", 7),
];

const TOPICS: [&str; 8] = [
    "your last weekend",
    "your favorite holiday",
    "a trip with your family",
    "your best friend",
    "your first day at school",
    "a birthday party",
    "a rainy day",
    "your favorite meal",
];

const ISSUES: [&str; 6] = [
    "whether students should wear uniforms",
    "whether homework should be banned",
    "whether pets should be allowed at school",
    "whether kids should have phones",
    "whether school should start later",
    "whether video games are good for kids",
];

const WORDS: [&str; 10] = [
    "delicious",
    "beautiful",
    "tiny",
    "quiet",
    "colorful",
    "gentle",
    "bright",
    "famous",
    "strange",
    "lovely",
];

const SCENARIOS: [&str; 6] = [
    "ordering food at a restaurant",
    "buying a ticket at the station",
    "checking in at a hotel",
    "asking for directions in a city",
    "shopping for clothes",
    "visiting a doctor",
];

/// General past-tense answers used for question, debate and role-play blocks.
const ANSWERS: [(&str, usize); 8] = [
    ("We {v} to the beach together.", 0),
    ("I {v} a big sandwich for lunch.", 1),
    ("I {v} many birds in the sky.", 2),
    ("My mom {v} me a new hat.", 3),
    ("We {v} a lot of photos.", 4),
    ("I {v} a short letter to my friend.", 5),
    ("I {v} along the river in the morning.", 6),
    ("We {v} a cake for my dad.", 7),
];

/// Verb index and noun for vocabulary answers: "I {v} a {word} {noun}."
const VOCAB_ANSWERS: [(usize, &str); 5] = [(1, "cake"), (2, "bird"), (3, "hat"), (7, "card"), (4, "photo")];

const READY_LINES: [&str; 3] = ["Okay, I am ready.", "Sure, let's go.", "Alright, I am ready."];

const PRAISES: [&str; 5] = ["Great job!", "Well done!", "Excellent!", "That's right!", "Perfect!"];

const GREETING: &str = "Hello! Welcome to today's lesson.";
const MOVE_ON: &str = "That is all for this part. Let's move on to the next activity.";
const LESSON_END: &str = "That is the end of our lesson today. See you next time!";

fn kind_index(kind: InstructionKind) -> usize {
    InstructionKind::ALL.iter().position(|k| *k == kind).unwrap()
}

fn standard_target_turns(kind: InstructionKind) -> u32 {
    match kind {
        InstructionKind::ReadAloud => 10,
        InstructionKind::QuestionAnswer => 10,
        InstructionKind::Debate => 12,
        InstructionKind::Vocabulary => 8,
        InstructionKind::Roleplay => 10,
    }
}

fn middle_prompts(kind: InstructionKind) -> &'static [&'static str] {
    match kind {
        InstructionKind::ReadAloud => &[
            "Now read it once more, a little slower.",
            "Read the sentence again with a clear voice.",
            "Read it one more time, nice and smooth.",
            "Please read it again and stress the verb.",
        ],
        InstructionKind::QuestionAnswer => &[
            "What else did you do that day?",
            "Who did you spend time with?",
            "How did you feel about it?",
            "What was the best part?",
        ],
        InstructionKind::Debate => &[
            "Can you give me one reason?",
            "What would people on the other side say?",
            "Can you share an example from your life?",
            "How would you answer that argument?",
        ],
        InstructionKind::Vocabulary => &[
            "Can you make another sentence with it?",
            "Use the word once more in a new sentence.",
            "Make one more sentence with the word.",
            "Show me the word in a different sentence.",
        ],
        InstructionKind::Roleplay => &[
            "What else would you like?",
            "Did you have any trouble on the way?",
            "Is there anything else you need?",
            "How was your day so far?",
        ],
    }
}

/// What an instruction is about; kept alongside the instruction so student
/// answers and tutor prompts can be filled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Content {
    Sentence(usize),
    Topic(usize),
    Issue(usize),
    Word(usize),
    Scenario(usize),
}

impl Content {
    fn for_kind(kind: InstructionKind, slot: usize) -> Self {
        match kind {
            InstructionKind::ReadAloud => Content::Sentence(slot % READ_SENTENCES.len()),
            InstructionKind::QuestionAnswer => Content::Topic(slot % TOPICS.len()),
            InstructionKind::Debate => Content::Issue(slot % ISSUES.len()),
            InstructionKind::Vocabulary => Content::Word(slot % WORDS.len()),
            InstructionKind::Roleplay => Content::Scenario(slot % SCENARIOS.len()),
        }
    }

    fn pool_size(kind: InstructionKind) -> usize {
        match kind {
            InstructionKind::ReadAloud => READ_SENTENCES.len(),
            InstructionKind::QuestionAnswer => TOPICS.len(),
            InstructionKind::Debate => ISSUES.len(),
            InstructionKind::Vocabulary => WORDS.len(),
            InstructionKind::Roleplay => SCENARIOS.len(),
        }
    }

    /// Recovers the content slot from an instruction's text.
    fn parse(inst: &Instruction) -> Option<Self> {
        (0..Self::pool_size(inst.kind))
            .map(|slot| Self::for_kind(inst.kind, slot))
            .find(|c| c.instruction_text() == inst.text)
    }

    fn instruction_text(self) -> String {
        match self {
            Content::Sentence(i) => format!(
                "Ask the student to read this sentence aloud: {}",
                fill(READ_SENTENCES[i].0, ERROR_PAIRS[READ_SENTENCES[i].1].0)
            ),
            Content::Topic(i) => format!("Ask the student questions about {}.", TOPICS[i]),
            Content::Issue(i) => format!("Have a short debate with the student on {}.", ISSUES[i]),
            Content::Word(i) => format!(
                "Teach the word {} and ask the student to use it in sentences.",
                WORDS[i]
            ),
            Content::Scenario(i) => format!("Role-play {} with the student.", SCENARIOS[i]),
        }
    }

    fn opening_prompt(self) -> String {
        match self {
            Content::Sentence(i) => format!(
                "Let's practice reading. Please read this sentence aloud: {}",
                fill(READ_SENTENCES[i].0, ERROR_PAIRS[READ_SENTENCES[i].1].0)
            ),
            Content::Topic(i) => format!("Let's talk about {}. Tell me what happened.", TOPICS[i]),
            Content::Issue(i) => format!("Let's debate {}. What is your opinion?", ISSUES[i]),
            Content::Word(i) => format!(
                "Today's word is {w}. Can you use {w} in a sentence?",
                w = WORDS[i]
            ),
            Content::Scenario(i) => format!(
                "Let's role-play {}. I will start. Hello, how can I help you?",
                SCENARIOS[i]
            ),
        }
    }
}

fn fill(template: &str, verb: &str) -> String {
    template.replace("{v}", verb)
}

/// A student answer together with the verb pair it exercises.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudentAnswer {
    pub text: String,
    pub verb_pair: usize,
    pub is_error: bool,
}

/// Produces the scripted student side of a lesson.
#[derive(Debug, Clone, Copy)]
pub struct StudentScript {
    pub profile: PhraseBankProfile,
}

impl StudentScript {
    pub fn new(profile: PhraseBankProfile) -> Self {
        Self { profile }
    }

    /// The student's reply to a tutor closing line ("let's move on").
    pub fn ready_line<R: Rng>(&self, rng: &mut R) -> &'static str {
        match self.profile {
            PhraseBankProfile::Minimal => READY_LINES[0],
            PhraseBankProfile::Standard => READY_LINES[rng.gen_range(0..READY_LINES.len())],
        }
    }

    /// The student's answer to the tutor's `step`-th prompt of `inst`.
    pub fn answer<R: Rng>(
        &self,
        inst: &Instruction,
        step: usize,
        is_error: bool,
        rng: &mut R,
    ) -> StudentAnswer {
        let content = Content::parse(inst);
        let pick = |rng: &mut R, n: usize| match self.profile {
            PhraseBankProfile::Minimal => step % n,
            PhraseBankProfile::Standard => rng.gen_range(0..n),
        };
        let (template, verb_pair) = match (inst.kind, content) {
            (InstructionKind::ReadAloud, Some(Content::Sentence(i))) => {
                (READ_SENTENCES[i].0.to_string(), READ_SENTENCES[i].1)
            }
            (InstructionKind::Vocabulary, Some(Content::Word(w))) => {
                let (verb, noun) = VOCAB_ANSWERS[pick(rng, VOCAB_ANSWERS.len())];
                (format!("I {{v}} a {} {noun}.", WORDS[w]), verb)
            }
            _ => {
                let (t, v) = ANSWERS[pick(rng, ANSWERS.len())];
                (t.to_string(), v)
            }
        };
        let (right, wrong) = ERROR_PAIRS[verb_pair];
        StudentAnswer {
            text: fill(&template, if is_error { wrong } else { right }),
            verb_pair,
            is_error,
        }
    }
}

/// Feedback prefix a tutor line opens with, given the student's last answer.
fn feedback(kind: InstructionKind, step: usize, prev: Option<&StudentAnswer>, profile: PhraseBankProfile) -> (DialCode, Option<String>) {
    match prev {
        None => (DialCode::Others, None),
        Some(a) if a.is_error => {
            let (right, wrong) = ERROR_PAIRS[a.verb_pair];
            (DialCode::Correction, Some(format!("Not quite. Say {right}, not {wrong}.")))
        }
        Some(_) => {
            let praise = match profile {
                PhraseBankProfile::Minimal => PRAISES[0],
                PhraseBankProfile::Standard => PRAISES[(kind_index(kind) + step) % PRAISES.len()],
            };
            (DialCode::Confirmation, Some(praise.to_string()))
        }
    }
}

/// Tutor line for the `step`-th tutor turn of a block with `steps` tutor turns.
pub(crate) fn tutor_line(
    inst: &Instruction,
    step: usize,
    steps: usize,
    is_last_instruction: bool,
    opens_lesson: bool,
    prev: Option<&StudentAnswer>,
    profile: PhraseBankProfile,
) -> (String, DialCode) {
    let (code, prefix) = feedback(inst.kind, step, prev, profile);
    let body = if step + 1 == steps {
        if is_last_instruction { LESSON_END } else { MOVE_ON }.to_string()
    } else if step == 0 {
        Content::parse(inst)
            .map(Content::opening_prompt)
            .unwrap_or_else(|| inst.text.clone())
    } else {
        let prompts = middle_prompts(inst.kind);
        prompts[(step - 1) % prompts.len()].to_string()
    };
    let mut parts = Vec::new();
    if opens_lesson {
        parts.push(GREETING.to_string());
    }
    parts.extend(prefix);
    parts.push(body);
    (parts.join(" "), code)
}

/// Number of turns in block `index` for an instruction of `target_turns`.
pub fn block_len(index: usize, target_turns: u32) -> usize {
    let t = target_turns as usize;
    if index == 0 {
        (t - 1).max(3)
    } else {
        t
    }
}

/// Number of tutor turns in block `index`.
pub fn tutor_steps(index: usize, target_turns: u32) -> usize {
    let len = block_len(index, target_turns);
    if index == 0 {
        len.div_ceil(2)
    } else {
        len / 2
    }
}

fn build_curricula(config: &CorpusConfig, rng: &mut ChaCha8Rng) -> Vec<Curriculum> {
    let n = config.n_instructions_per_curriculum;
    // per kind, a shuffled order of content slots; consumed in turn so texts
    // stay distinct across curricula while the bank lasts
    let mut slots: Vec<Vec<usize>> = InstructionKind::ALL
        .iter()
        .map(|&k| {
            let mut v: Vec<usize> = (0..Content::pool_size(k)).collect();
            v.shuffle(rng);
            v
        })
        .collect();
    let mut cursor = [0usize; 5];
    (0..config.n_curricula)
        .map(|c| {
            let mut used = std::collections::HashSet::new();
            let instructions = (0..n)
                .map(|j| {
                    let ki = (c + j) % InstructionKind::ALL.len();
                    let kind = InstructionKind::ALL[ki];
                    let pool = &mut slots[ki];
                    let mut content;
                    loop {
                        content = Content::for_kind(kind, pool[cursor[ki] % pool.len()]);
                        cursor[ki] += 1;
                        if used.insert(content.instruction_text()) || cursor[ki] > 4 * pool.len() {
                            break;
                        }
                    }
                    let target_turns = config.target_turns.unwrap_or(match config.phrase_bank_profile {
                        PhraseBankProfile::Minimal => 4,
                        PhraseBankProfile::Standard => standard_target_turns(kind),
                    });
                    Instruction {
                        id: format!("c{c:02}-i{j:02}"),
                        text: content.instruction_text(),
                        kind,
                        target_turns,
                    }
                })
                .collect();
            Curriculum {
                id: format!("c{c:02}"),
                instructions,
            }
        })
        .collect()
}

fn generate_dialogue(
    id: String,
    curriculum: &Curriculum,
    config: &CorpusConfig,
    rng: &mut ChaCha8Rng,
) -> AlignedDialogue {
    let script = StudentScript::new(config.phrase_bank_profile);
    let profile = config.phrase_bank_profile;
    let n = curriculum.len();
    let mut turns = Vec::new();
    for (index, inst) in curriculum.instructions.iter().enumerate() {
        let steps = tutor_steps(index, inst.target_turns);
        let mut prev_answer: Option<StudentAnswer> = None;
        if index > 0 {
            turns.push(Turn::student(script.ready_line(rng), index));
        }
        for step in 0..steps {
            if step > 0 {
                let is_error = rng.gen_bool(config.noise_rate);
                let answer = script.answer(inst, step - 1, is_error, rng);
                turns.push(Turn::student(answer.text.clone(), index));
                prev_answer = Some(answer);
            }
            let (text, code) = tutor_line(
                inst,
                step,
                steps,
                index + 1 == n,
                index == 0 && step == 0,
                prev_answer.as_ref(),
                profile,
            );
            turns.push(Turn::tutor(text, index, code, step + 1 == steps));
        }
    }
    AlignedDialogue {
        id,
        curriculum_id: curriculum.id.clone(),
        turns,
    }
}

/// Generates curricula and dialogues; a pure function of the config (seed included).
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus, CorpusError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let curricula = build_curricula(config, &mut rng);
    let dialogues = (0..config.n_dialogues)
        .map(|d| {
            let c = &curricula[rng.gen_range(0..curricula.len())];
            generate_dialogue(format!("d{d:05}"), c, config, &mut rng)
        })
        .collect();
    Ok(Corpus {
        config: config.clone(),
        curricula,
        dialogues,
    })
}
