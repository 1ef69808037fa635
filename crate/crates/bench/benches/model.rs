use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use tutorbot_bench::fixture;
use tutorbot_core::model::forward;
use tutorbot_core::trainer::{batch_gradients, Adam, JointObjective, TrainExample};
use tutorbot_core::{Ablation, Decode, Engine, EngineConfig};

fn forward_pass(c: &mut Criterion) {
    let f = fixture();
    let batch: Vec<&TrainExample> = f.prepared.iter().take(8).collect();
    let src: Vec<Vec<u32>> = batch.iter().map(|e| e.src.clone()).collect();
    let tgt: Vec<Vec<u32>> = batch.iter().map(|e| e.target[..e.target.len() - 1].to_vec()).collect();
    let objective = JointObjective::new(Ablation::RgAcPr, f.model.config.max_tgt_len);

    let mut group = c.benchmark_group("model");
    group.bench_function("forward_batch8", |b| {
        b.iter(|| forward(&f.model.params, &f.model.config, black_box(&src), black_box(&tgt)).unwrap())
    });
    group.bench_function("gradients_batch8", |b| {
        b.iter(|| batch_gradients(&f.model.params, &f.model.config, black_box(&batch), &objective, None).unwrap())
    });
    group.bench_function("adam_step", |b| {
        let (_, grads) = batch_gradients(&f.model.params, &f.model.config, &batch, &objective, None).unwrap();
        b.iter_batched(
            || (f.model.params.clone(), Adam::new(&f.model.params, 3e-3)),
            |(mut params, mut adam)| adam.update(&mut params, &grads),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

fn generation(c: &mut Criterion) {
    let f = fixture();
    let ex = &f.examples[5];
    let mut group = c.benchmark_group("generate");
    group.bench_function("greedy", |b| {
        b.iter(|| f.model.generate(black_box(&ex.context), &ex.instruction_text, Decode::Greedy).unwrap())
    });
    group.bench_function("beam4", |b| {
        b.iter(|| f.model.generate(black_box(&ex.context), &ex.instruction_text, Decode::Beam(4)).unwrap())
    });
    let engine = Engine::new(&f.model, EngineConfig::default()).unwrap();
    let curriculum = f.corpus.curricula[0].clone();
    group.bench_function("engine_turn", |b| {
        let (state, _) = engine.start_session("bench", curriculum.clone()).unwrap();
        b.iter_batched(
            || state.clone(),
            |mut s| engine.student_turn(&mut s, "the cat is on the mat").unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, forward_pass, generation);
criterion_main!(benches);
