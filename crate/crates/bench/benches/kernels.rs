use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use fundus_bench::{conv_case, conv_macs, STANDARD_CONVS};
use fundus_core::ops::{conv2d_backward, conv2d_forward, conv2d_forward_direct, maxpool2x2_forward};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    g.sample_size(20);
    for (side, cin, f) in STANDARD_CONVS {
        let (x, k) = conv_case(side, cin, f, 3);
        let id = format!("{side}x{side}x{cin}->{f}");
        g.throughput(Throughput::Elements(conv_macs(side, cin, f)));
        g.bench_with_input(BenchmarkId::new("forward", &id), &(), |b, _| {
            b.iter(|| conv2d_forward(black_box(&x), black_box(&k)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("forward_direct", &id), &(), |b, _| {
            b.iter(|| conv2d_forward_direct(black_box(&x), black_box(&k)).unwrap())
        });
        let y = conv2d_forward(&x, &k).unwrap();
        g.throughput(Throughput::Elements(2 * conv_macs(side, cin, f)));
        g.bench_with_input(BenchmarkId::new("backward", &id), &(), |b, _| {
            b.iter(|| conv2d_backward(black_box(&x), black_box(&k), black_box(&y)).unwrap())
        });
    }
    g.finish();
}

fn pool(c: &mut Criterion) {
    let (x, _) = conv_case(148, 16, 1, 5);
    c.bench_function("maxpool2x2 148x148x16", |b| b.iter(|| maxpool2x2_forward(black_box(&x)).unwrap()));
}

criterion_group!(benches, conv, pool);
criterion_main!(benches);
