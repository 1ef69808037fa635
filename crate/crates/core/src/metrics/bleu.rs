use std::collections::HashMap;

use super::MetricsError;
use crate::text::is_code_token;

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn strip<S: AsRef<str>>(tokens: &[S]) -> Vec<&str> {
    tokens
        .iter()
        .map(|t| t.as_ref())
        .filter(|t| !is_code_token(t))
        .collect()
}

/// Corpus-level cumulative BLEU with a single reference per hypothesis.
///
/// Clipped n-gram matches and n-gram totals are pooled over the corpus,
/// precisions are combined with uniform weights, and the brevity penalty is
/// `exp(1 - r/c)` when the hypotheses are not longer than the references.
/// Action-code tokens are removed from both sides first. No smoothing: any
/// zero precision gives 0.
///
/// Note that pooled BLEU-n is not guaranteed to fall as n grows: hypotheses
/// shorter than n add to the unigram denominator but not to the n-gram one.
pub fn bleu<S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<S>],
    max_n: usize,
) -> Result<f64, MetricsError> {
    if hypotheses.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if !(1..=4).contains(&max_n) {
        return Err(MetricsError::MaxN(max_n));
    }
    let hyps: Vec<Vec<&str>> = hypotheses.iter().map(|h| strip(h)).collect();
    let refs: Vec<Vec<&str>> = references.iter().map(|r| strip(r)).collect();
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let mut matches = 0usize;
        let mut total = 0usize;
        for (h, r) in hyps.iter().zip(&refs) {
            let rc = ngram_counts(r, n);
            for (gram, c) in ngram_counts(h, n) {
                matches += c.min(rc.get(gram).copied().unwrap_or(0));
            }
            total += (h.len() + 1).saturating_sub(n);
        }
        if matches == 0 {
            return Ok(0.0);
        }
        log_sum += (matches as f64 / total as f64).ln();
    }
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    Ok(bp * (log_sum / max_n as f64).exp())
}

/// BLEU-1 through BLEU-4.
pub fn bleu_1_to_4<S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<S>],
) -> Result<[f64; 4], MetricsError> {
    let mut out = [0.0; 4];
    for (n, slot) in out.iter_mut().enumerate() {
        *slot = bleu(hypotheses, references, n + 1)?;
    }
    Ok(out)
}
