use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rtedmd_bench::workload;
use rtedmd_core::experiments::{estimate_method, simulate_trial, trial_seeds, Method};
use rtedmd_core::spectral::eigendecompose;

fn simulate(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    for name in ["ou.toml", "lv.toml"] {
        let w = workload(name, 100.0, 1).unwrap();
        g.bench_function(BenchmarkId::new(name, "J=10"), |b| {
            b.iter(|| {
                simulate_trial(
                    &w.config,
                    &w.model,
                    100.0,
                    10,
                    trial_seeds(w.config.seed, 0),
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

fn estimate(c: &mut Criterion) {
    let mut g = c.benchmark_group("estimate");
    g.sample_size(10);
    let w = workload("ou.toml", 100.0, 20).unwrap();
    for method in [Method::Rt, Method::RtMod, Method::Edmd, Method::Gedmd] {
        g.bench_function(method.id(), |b| {
            b.iter(|| {
                estimate_method(method, &w.ensemble, &w.dictionary, &w.config.estimators).unwrap()
            })
        });
    }
    g.finish();
}

fn spectrum(c: &mut Criterion) {
    let w = workload("lv.toml", 100.0, 5).unwrap();
    let l = estimate_method(
        Method::RtMod,
        &w.ensemble,
        &w.dictionary,
        &w.config.estimators,
    )
    .unwrap();
    c.bench_function("eigendecompose_lv", |b| {
        b.iter(|| eigendecompose(&l).unwrap())
    });
}

criterion_group!(benches, simulate, estimate, spectrum);
criterion_main!(benches);
