use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bgwqsd_bench::{models, CAP};
use bgwqsd_core::kernel::{build_kernel_exact, spectral_radius};
use bgwqsd_core::montecarlo::simulate_batch;
use bgwqsd_core::presets;
use bgwqsd_core::spectral::power_iterate;
use bgwqsd_core::StateVector;

fn kernel_build(c: &mut Criterion) {
    let mut g = c.benchmark_group("kernel_build");
    for (name, spec, r) in models() {
        g.bench_with_input(BenchmarkId::new(name, r), &r, |b, &r| {
            b.iter(|| build_kernel_exact(&spec, r, CAP).unwrap())
        });
    }
    g.finish();
}

fn eigen(c: &mut Criterion) {
    let mut g = c.benchmark_group("eigen");
    for (name, spec, r) in models() {
        g.bench_function(BenchmarkId::new("power_iterate", name), |b| {
            b.iter(|| power_iterate(&spec, 1e-14, 100_000).unwrap())
        });
        let k = build_kernel_exact(&spec, r, CAP).unwrap();
        g.bench_function(BenchmarkId::new("spectral_radius", name), |b| {
            b.iter(|| spectral_radius(&k, 1e-13, 200_000).unwrap())
        });
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let spec = presets::model_b();
    let z0 = StateVector::new(vec![1]);
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.bench_function("model_b_1e5_paths_h15", |b| {
        b.iter(|| simulate_batch(&spec, &z0, 15, 100_000, 1).unwrap())
    });
    g.finish();
}

criterion_group!(benches, kernel_build, eigen, simulation);
criterion_main!(benches);
