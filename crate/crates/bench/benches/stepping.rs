use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use peridyn::{newmark_step, stormer_verlet_step, BenchmarkSpec, TimeConfig};
use std::hint::black_box;

fn steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    for n in [32, 64, 128] {
        let spec = BenchmarkSpec::smooth();
        let grid = spec.physical_grid(1.0 / n as f64).unwrap();
        let problem = spec.problem(grid, None).unwrap();
        let state = spec.initial_state(grid).unwrap();
        for dt in [1e-3, 1e-1] {
            let cfg = TimeConfig::new(dt, 1.0, 0.25).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("newmark_dt{dt}"), n), &n, |b, _| {
                b.iter(|| newmark_step(black_box(&state), &problem, &cfg).unwrap())
            });
        }
        let cfg = TimeConfig::new(1e-3, 1.0, 0.0).unwrap();
        group.bench_with_input(BenchmarkId::new("stormer_verlet", n), &n, |b, _| {
            b.iter(|| stormer_verlet_step(black_box(&state), &problem, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, steps);
criterion_main!(benches);
