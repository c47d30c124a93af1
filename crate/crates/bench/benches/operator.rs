use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use peridyn::{apply_direct, apply_spectral, jvp};
use peridyn_bench::{benchmark_operator, random_field};
use std::hint::black_box;

fn spectral_vs_direct(c: &mut Criterion) {
    let mut group = c.benchmark_group("operator_r3");
    for n in [16, 32] {
        let op = benchmark_operator(n, 3);
        let u = random_field(*op.grid(), 1);
        group.bench_with_input(BenchmarkId::new("direct", n), &n, |b, _| {
            b.iter(|| apply_direct(black_box(&u), &op).unwrap())
        });
    }
    for n in [16, 32, 64, 128, 256] {
        let op = benchmark_operator(n, 3);
        let u = random_field(*op.grid(), 1);
        group.bench_with_input(BenchmarkId::new("spectral", n), &n, |b, _| {
            b.iter(|| apply_spectral(black_box(&u), &op).unwrap())
        });
    }
    group.finish();
}

fn exponent_scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectral_n128");
    for r in [1, 3, 5, 7] {
        let op = benchmark_operator(128, r);
        let u = random_field(*op.grid(), 2);
        group.bench_with_input(BenchmarkId::new("apply", r), &r, |b, _| {
            b.iter(|| apply_spectral(black_box(&u), &op).unwrap())
        });
    }
    let op = benchmark_operator(128, 3);
    let u = random_field(*op.grid(), 3);
    let h = random_field(*op.grid(), 4);
    group.bench_function("jvp_r3", |b| b.iter(|| jvp(black_box(&u), &h, &op).unwrap()));
    let lin = op.linearize(&u).unwrap();
    group.bench_function("linearized_apply_r3", |b| {
        b.iter(|| lin.apply(black_box(&h)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, spectral_vs_direct, exponent_scaling);
criterion_main!(benches);
