use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use fundus_bench::uniform;
use fundus_core::data::{decode_and_resize, encode_png, fixture_pixel, separable_fixture, INPUT_SIZE};
use fundus_core::train::train;
use fundus_core::{backward, forward, init_weights, ModelConfig, TrainConfig};

fn network(c: &mut Criterion) {
    let weights = init_weights(&ModelConfig::standard(), 1).unwrap();
    let image = uniform(&[INPUT_SIZE, INPUT_SIZE, 3], 0.0, 1.0, 2);
    let mut g = c.benchmark_group("standard");
    g.sample_size(10);
    g.bench_function("forward", |b| b.iter(|| forward(black_box(&weights), black_box(&image)).unwrap()));
    g.bench_function("forward+backward", |b| b.iter(|| backward(black_box(&weights), black_box(&image), 1).unwrap()));
    let size = INPUT_SIZE as u32;
    let png = encode_png(size, size, |x, y| fixture_pixel(0, true, size, x, y));
    g.bench_function("decode+resize png", |b| b.iter(|| decode_and_resize(black_box(&png)).unwrap()));
    g.finish();
}

fn training(c: &mut Criterion) {
    let records = separable_fixture(4, INPUT_SIZE);
    let config = TrainConfig {
        epochs: 1,
        steps_per_epoch: 1,
        validation_steps: 1,
        batch_size: 8,
        augment: None,
        ..TrainConfig::default()
    };
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("one step of 8 plus validation", |b| {
        b.iter(|| train(config.clone(), black_box(&records), black_box(&records)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, network, training);
criterion_main!(benches);
