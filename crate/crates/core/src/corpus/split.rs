use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::types::Corpus;
use super::CorpusError;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplits {
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
}

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Splits at dialogue granularity.
///
/// Valid and test sizes are `floor(n * ratio)`; train takes the rest. Any
/// curriculum that lands only in valid/test is swapped into train so every
/// held-out curriculum is also seen during training.
pub fn split_corpus(
    corpus: &Corpus,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<CorpusSplits, CorpusError> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !(0.0..=1.0).contains(r)) || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(CorpusError::Config(format!(
            "split ratios must be in [0, 1] and sum to 1, got {ratios:?}"
        )));
    }
    let n = corpus.dialogues.len();
    if n < 10 {
        return Err(CorpusError::Config(format!(
            "cannot split {n} dialogues; at least 10 are required"
        )));
    }
    let n_valid = (n as f64 * rv + 1e-9).floor() as usize;
    let n_test = (n as f64 * rs + 1e-9).floor() as usize;
    let n_train = n - n_valid - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let curriculum_of = |i: usize| corpus.dialogues[i].curriculum_id.as_str();
    let mut train_counts: HashMap<&str, usize> = HashMap::new();
    for &i in &order[..n_train] {
        *train_counts.entry(curriculum_of(i)).or_default() += 1;
    }
    for pos in n_train..n {
        let cur = curriculum_of(order[pos]);
        if train_counts.get(cur).copied().unwrap_or(0) > 0 {
            continue;
        }
        let donor = (0..n_train).rev().find(|&t| train_counts[curriculum_of(order[t])] > 1);
        let Some(t) = donor else {
            return Err(CorpusError::Config(format!(
                "curriculum {cur} cannot be shared with the training split"
            )));
        };
        *train_counts.get_mut(curriculum_of(order[t])).unwrap() -= 1;
        order.swap(t, pos);
        *train_counts.entry(cur).or_default() += 1;
    }

    let take = |range: std::ops::Range<usize>| {
        corpus.with_dialogues(
            order[range]
                .iter()
                .map(|&i| corpus.dialogues[i].clone())
                .collect(),
        )
    };
    Ok(CorpusSplits {
        train: take(0..n_train),
        valid: take(n_train..n_train + n_valid),
        test: take(n_train + n_valid..n),
    })
}
