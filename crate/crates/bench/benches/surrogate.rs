use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use harbor_bench::{observations, sim9};
use harbor_core::surrogate::{fit, Penalties};

fn fitting(c: &mut Criterion) {
    let sim = sim9();
    let r0 = sim.truth(&sim.space().baseline_config(), u64::MAX).mean;
    let mut group = c.benchmark_group("fit");
    for n in [32, 128, 512] {
        let obs = observations(&sim, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &obs, |b, obs| {
            b.iter(|| fit(black_box(obs), sim.space(), Penalties::default(), r0).unwrap())
        });
    }
    group.finish();
}

fn predicting(c: &mut Criterion) {
    let sim = sim9();
    let r0 = sim.truth(&sim.space().baseline_config(), u64::MAX).mean;
    let s = fit(&observations(&sim, 128), sim.space(), Penalties::default(), r0).unwrap();
    let queries = sim.space().enumerate();
    c.bench_function("predict whole space", |b| b.iter(|| queries.iter().map(|q| s.predict(q).mean).sum::<f64>()));
}

criterion_group!(benches, fitting, predicting);
criterion_main!(benches);
