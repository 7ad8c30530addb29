//! Direct vs FFT-backed interaction field, and raw circular convolutions.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use fluctlab_bench::bench_state;
use fluctlab_core::convolve::{circular_convolve, ConvolveMethod, Convolver};
use fluctlab_core::interaction_field;

fn bench_interaction(c: &mut Criterion) {
    let mut group = c.benchmark_group("interaction_field");
    for exp in [8usize, 10, 12] {
        let (model, state) = bench_state(1 << exp, 0.75, 42);
        group.bench_with_input(BenchmarkId::new("fast", 1 << exp), &exp, |b, _| {
            b.iter(|| {
                black_box(interaction_field(&state, &model, ConvolveMethod::Fast).unwrap())
            })
        });
        // direct is O(L²); keep it to the smaller sizes
        if exp <= 10 {
            group.bench_with_input(BenchmarkId::new("direct", 1 << exp), &exp, |b, _| {
                b.iter(|| {
                    black_box(interaction_field(&state, &model, ConvolveMethod::Direct).unwrap())
                })
            });
        }
    }
    group.finish();
}

fn bench_convolution(c: &mut Criterion) {
    let mut group = c.benchmark_group("circular_convolve");
    for exp in [10usize, 12, 14] {
        let len = 1 << exp;
        let kernel: Vec<f64> = (0..len)
            .map(|k| if k == 0 { 0.0 } else { 1.0 / (k.min(len - k) as f64) })
            .collect();
        let signal: Vec<f64> = (0..len).map(|i| (i as f64 * 0.1).sin()).collect();
        let conv = Convolver::new(&kernel);
        group.bench_with_input(BenchmarkId::new("fft_planned", len), &exp, |b, _| {
            b.iter(|| black_box(conv.convolve(&signal)))
        });
        if exp <= 12 {
            group.bench_with_input(BenchmarkId::new("direct", len), &exp, |b, _| {
                b.iter(|| {
                    black_box(circular_convolve(&kernel, &signal, ConvolveMethod::Direct).unwrap())
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_interaction, bench_convolution);
criterion_main!(benches);
