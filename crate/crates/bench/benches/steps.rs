use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use threadsum_core::corpus::InterleavePreset;
use threadsum_core::model::{Model, ModelConfig, Variant};
use threadsum_core::numcore::{lstm_step, AdamState, Graph, LstmParams, ParamStore};
use threadsum_core::textproc::{random_encoded, Limits, EncodedInstance};
use threadsum_core::train::train_step;

fn lstm(c: &mut Criterion) {
    let mut group = c.benchmark_group("lstm_step");
    for d in [32, 100] {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = LstmParams::register(&mut store, "cell", 2 * d, d, &mut rng).unwrap();
        group.bench_function(format!("d{d}_forward_backward"), |b| {
            b.iter(|| {
                let mut g = Graph::new(&store);
                let x = g.vector(vec![0.1; 2 * d]);
                let h = g.zeros(&[d]);
                let c0 = g.zeros(&[d]);
                let (h1, _) = lstm_step(&mut g, &cell, x, h, c0).unwrap();
                let loss = g.sum(h1);
                black_box(g.backward(loss).unwrap());
            })
        });
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let limits = Limits::for_preset(&InterleavePreset::MEDIUM);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<EncodedInstance> = (0..4).map(|i| random_encoded(&mut rng, 64, &limits, 2 + i % 2)).collect();
    let batch: Vec<&EncodedInstance> = data.iter().collect();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for variant in [Variant::Seq2seq, Variant::Hier2hier] {
        let model = Model::new(ModelConfig::new(variant, 64, 64, limits), 0).unwrap();
        group.bench_function(format!("{variant}_d64_batch4"), |b| {
            b.iter_batched(
                || {
                    let m = Model::from_params(model.config.clone(), model.params.clone()).unwrap();
                    let adam = AdamState::new(&m.params, 1e-3);
                    (m, adam)
                },
                |(mut m, mut adam)| {
                    let mut drop = ChaCha8Rng::seed_from_u64(2);
                    black_box(train_step(&mut m, &mut adam, &batch, &mut drop, 5.0).unwrap())
                },
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, lstm, training);
criterion_main!(benches);
