//! Per-case scoring cost: one pass per option against `ceil(n / k)`
//! passes.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tesel_bench::{fixture, instance};
use tesel_core::inference::{score_pairwise, score_parallel};
use tesel_core::pairing::LayoutBuilder;

fn scoring(c: &mut Criterion) {
    let n = 77;
    let (space, vocab, model) = fixture(n);
    let builder = LayoutBuilder::new(&vocab, &space, 256);
    let inst = instance(n, 5);
    let options: Vec<usize> = (0..n).collect();

    let mut group = c.benchmark_group("score_77_options");
    group.sample_size(10);
    group.bench_function("pairwise", |b| {
        b.iter(|| score_pairwise(&model, &builder, black_box(&inst), &options).unwrap())
    });
    for k in [8, 25, 77] {
        group.bench_with_input(BenchmarkId::new("parallel", k), &k, |b, &k| {
            b.iter(|| score_parallel(&model, &builder, black_box(&inst), &options, k).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, scoring);
criterion_main!(benches);
