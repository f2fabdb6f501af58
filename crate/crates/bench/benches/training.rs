//! Forward + backward cost of one training layout per paradigm.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tesel_bench::{fixture, instance};
use tesel_core::pairing::LayoutBuilder;

fn layout_step(c: &mut Criterion) {
    let n = 40;
    let (space, vocab, model) = fixture(n);
    let builder = LayoutBuilder::new(&vocab, &space, 256);
    let inst = instance(n, 3);
    let pair = builder.make_te_pair(&inst, 3).unwrap();
    let parallel = builder.make_parallel_pair(&inst, &[9, 3, 17, 21, 4, 30, 12, 0]).unwrap();

    let mut group = c.benchmark_group("train_step");
    group.sample_size(20);
    group.bench_function("pair_ce", |b| {
        b.iter(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut g = model.graph(true);
            let reps = model.forward(&mut g, black_box(&pair.ids), Some(&mut rng)).unwrap();
            let probs = model.classify_in(&mut g, reps).unwrap();
            let loss = g.cross_entropy(probs, &[0]).unwrap();
            g.backward(loss).unwrap();
            g.take_param_grads()
        })
    });
    group.bench_function("parallel8_bce", |b| {
        b.iter(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut g = model.graph(true);
            let reps = model.forward(&mut g, black_box(&parallel.ids), Some(&mut rng)).unwrap();
            let scores = model.score_in(&mut g, reps, &parallel.option_spans).unwrap();
            let loss = g.bce(scores, &parallel.labels).unwrap();
            g.backward(loss).unwrap();
            g.take_param_grads()
        })
    });
    group.finish();
}

criterion_group!(benches, layout_step);
criterion_main!(benches);
