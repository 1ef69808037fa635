//! Shared fixtures for the benchmarks.

use tutorbot_core::corpus::{annotate_corpus, generate_corpus, CorpusConfig, FeedbackLexicon};
use tutorbot_core::text::build_vocab;
use tutorbot_core::trainer::{prepare_examples, TrainExample};
use tutorbot_core::{Ablation, AnnotatedExample, Corpus, Model, TrainConfig};

pub struct Fixture {
    pub corpus: Corpus,
    pub examples: Vec<AnnotatedExample>,
    pub model: Model,
    pub prepared: Vec<TrainExample>,
}

/// A 40-dialogue corpus and an untrained model sized like the `fast` preset.
pub fn fixture() -> Fixture {
    let corpus = generate_corpus(&CorpusConfig {
        n_dialogues: 40,
        seed: 3,
        ..CorpusConfig::default()
    })
    .expect("valid corpus config");
    let examples = annotate_corpus(&corpus, &FeedbackLexicon::default()).expect("corpus annotates");
    let config = TrainConfig::fast();
    let vocab = build_vocab(&corpus, 1);
    let model_config = config.model_config(vocab.len());
    let prepared = prepare_examples(&examples, &vocab, &model_config, Ablation::RgAcPr, config.context_turns)
        .expect("examples fit the model");
    let model = Model::random(vocab, model_config, 1);
    Fixture {
        corpus,
        examples,
        model,
        prepared,
    }
}
