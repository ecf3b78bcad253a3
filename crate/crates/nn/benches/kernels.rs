//! Layer throughput with one worker versus the full pool.
//!
//! Build with `--no-default-features` to measure the sequential fallback.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qmap_nn::{loss_mse, par, ComputeGraph, GraphBuilder, LayerSpec, Mode, Tensor4};

fn input(dims: [usize; 4]) -> Tensor4 {
    let n: usize = dims.iter().product();
    Tensor4::from_vec(dims, (0..n).map(|k| ((k * 7919) % 997) as f64 / 997.0 - 0.5).collect()).unwrap()
}

fn conv_block(c_in: usize, c_out: usize) -> ComputeGraph {
    let mut b = GraphBuilder::new();
    let x = b.input(c_in);
    let c = b.then("conv", LayerSpec::conv(c_in, c_out), x);
    let n = b.then("bn", LayerSpec::batch_norm(c_out), c);
    let a = b.then("act", LayerSpec::leaky_relu(), n);
    b.then("pool", LayerSpec::MaxPool2x2, a);
    ComputeGraph::new(b.finish().unwrap(), 1).unwrap()
}

fn encoder_decoder() -> ComputeGraph {
    let mut b = GraphBuilder::new();
    let x = b.input(3);
    let c1 = b.then("c1", LayerSpec::conv(3, 16), x);
    let a1 = b.then("a1", LayerSpec::leaky_relu(), c1);
    let p1 = b.then("p1", LayerSpec::MaxPool2x2, a1);
    let c2 = b.then("c2", LayerSpec::conv(16, 32), p1);
    let a2 = b.then("a2", LayerSpec::leaky_relu(), c2);
    let u = b.then("u", LayerSpec::deconv(32, 16), a2);
    let cat = b.push("cat", LayerSpec::ConcatChannels, &[u, a1]);
    let c3 = b.then("c3", LayerSpec::conv(32, 1), cat);
    b.then("sig", LayerSpec::Sigmoid, c3);
    ComputeGraph::new(b.finish().unwrap(), 2).unwrap()
}

fn train_step(g: &ComputeGraph, x: &Tensor4) -> f64 {
    let tape = g.forward(&[x], Mode::Train, 0).unwrap();
    let (loss, grad) = loss_mse(tape.output(), &Tensor4::zeros(tape.output().dims())).unwrap();
    black_box(g.backward(&tape, &grad).unwrap());
    loss
}

fn workers() -> Vec<usize> {
    let all = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if all > 1 { vec![1, all] } else { vec![1] }
}

fn bench_conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv_block_step");
    group.sample_size(10);
    let g = conv_block(16, 32);
    let x = input([8, 16, 48, 48]);
    for w in workers() {
        group.bench_with_input(BenchmarkId::new("workers", w), &w, |b, &w| {
            b.iter(|| par::with_workers(w, || train_step(&g, &x)))
        });
    }
    group.finish();
}

fn bench_encoder_decoder(c: &mut Criterion) {
    let mut group = c.benchmark_group("encoder_decoder_step");
    group.sample_size(10);
    let g = encoder_decoder();
    let x = input([8, 3, 48, 48]);
    for w in workers() {
        group.bench_with_input(BenchmarkId::new("workers", w), &w, |b, &w| {
            b.iter(|| par::with_workers(w, || train_step(&g, &x)))
        });
    }
    group.finish();
}

fn bench_predict(c: &mut Criterion) {
    let mut group = c.benchmark_group("encoder_decoder_predict");
    group.sample_size(10);
    let g = encoder_decoder();
    let x = input([8, 3, 48, 48]);
    for w in workers() {
        group.bench_with_input(BenchmarkId::new("workers", w), &w, |b, &w| {
            b.iter(|| par::with_workers(w, || black_box(g.predict(&[&x]).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_conv, bench_encoder_decoder, bench_predict);
criterion_main!(benches);
