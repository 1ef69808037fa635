use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use tutorbot_bench::fixture;
use tutorbot_core::metrics::{bleu_1_to_4, evaluate, OracleModel};
use tutorbot_core::text::tokenize;
use tutorbot_core::Decode;

fn bleu(c: &mut Criterion) {
    let f = fixture();
    let refs: Vec<Vec<String>> = f.examples.iter().map(|e| tokenize(&e.target_response)).collect();
    // hypotheses: references rotated by one so n-gram overlap is partial
    let hyps: Vec<Vec<String>> = refs
        .iter()
        .map(|r| {
            let mut h = r.clone();
            if !h.is_empty() {
                h.rotate_left(1);
            }
            h
        })
        .collect();
    c.bench_function("bleu_1_to_4", |b| b.iter(|| bleu_1_to_4(black_box(&hyps), black_box(&refs)).unwrap()));

    let oracle = OracleModel::new(&f.examples, 16);
    c.bench_function("evaluate_oracle", |b| {
        b.iter(|| evaluate(&oracle, black_box(&f.examples), Decode::Greedy).unwrap())
    });
}

criterion_group!(benches, bleu);
criterion_main!(benches);
