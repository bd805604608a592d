use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use sspnet::arch::{forward_full, ModelState, NetworkConfig};
use sspnet::data::{generate_many, Batch, DataConfig};
use sspnet::eval::quant::argmax_error_mc;
use sspnet::par;

fn forward(c: &mut Criterion) {
    let cfg = NetworkConfig::toy();
    let model = ModelState::<f32>::init(&cfg, 0).unwrap();
    let data = DataConfig { augment: false, ..DataConfig::new(cfg.input_h, cfg.input_w) };
    let mut g = c.benchmark_group("forward_full_toy");
    g.sample_size(10);
    for b in [1usize, 4] {
        let seeds: Vec<u64> = (0..b as u64).collect();
        let batch = Batch::<f32>::from_samples(&generate_many(&data, &seeds).unwrap()).unwrap();
        g.bench_with_input(BenchmarkId::new("parallel", b), &batch, |bn, batch| {
            bn.iter(|| forward_full(&model, black_box(&batch.images)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("sequential", b), &batch, |bn, batch| {
            bn.iter(|| par::single_threaded(|| forward_full(&model, black_box(&batch.images)).unwrap()))
        });
    }
    g.finish();
}

fn synth(c: &mut Criterion) {
    let data = DataConfig::new(128, 128);
    let seeds: Vec<u64> = (0..16).collect();
    let mut g = c.benchmark_group("synthetic_16");
    g.sample_size(10);
    g.bench_function("parallel", |bn| bn.iter(|| generate_many(&data, black_box(&seeds)).unwrap()));
    g.bench_function("sequential", |bn| {
        bn.iter(|| par::single_threaded(|| generate_many(&data, black_box(&seeds)).unwrap()))
    });
    g.finish();
}

fn quant(c: &mut Criterion) {
    let mut g = c.benchmark_group("argmax_mc_100k");
    g.sample_size(10);
    g.bench_function("parallel", |bn| bn.iter(|| argmax_error_mc(black_box(16), 100_000, 1)));
    g.bench_function("sequential", |bn| {
        bn.iter(|| par::single_threaded(|| argmax_error_mc(black_box(16), 100_000, 1)))
    });
    g.finish();
}

criterion_group!(benches, forward, synth, quant);
criterion_main!(benches);
