use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use setref_core::train::{TrainConfig, Trainer};
use setref_core::{ModelConfig, RefinerModel, Scene};

fn loss_and_grads(c: &mut Criterion) {
    let model = RefinerModel::init(ModelConfig::default(), 0).unwrap();
    let mut g = c.benchmark_group("loss_and_grads");
    for n in [2, 4, 8] {
        let s = setref_bench::scene(n, 2);
        g.bench_with_input(BenchmarkId::from_parameter(n), &s, |b, s| {
            b.iter(|| model.loss_and_grads(s).unwrap())
        });
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let scenes: Vec<Scene> = (0..32).map(|i| setref_bench::scene(2 + i % 3, i as u64)).collect();
    let batch: Vec<&Scene> = scenes.iter().collect();
    let model = RefinerModel::init(ModelConfig::default(), 0).unwrap();
    c.bench_function("train_step/32", |b| {
        b.iter_batched(
            || {
                let m = model.clone();
                let t = Trainer::new(TrainConfig::default(), &m).unwrap();
                (m, t)
            },
            |(mut m, mut t)| t.step(&mut m, &batch).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, loss_and_grads, train_step);
criterion_main!(benches);
