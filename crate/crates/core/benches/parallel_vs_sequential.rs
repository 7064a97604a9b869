use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kow::kernels::KernelSpec;
use kow::optimal::period_grams;
use kow::panel::standardize;
use kow::sim::study::{replicate, SimMethod, StudyConfig};
use kow::sim::{draw, DgpSpec, Scenario};
use kow::Execution;

const STRATEGIES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn grams(c: &mut Criterion) {
    let mut group = c.benchmark_group("period_grams");
    for n in [500, 1500] {
        let panel = standardize(&draw(&DgpSpec::new(Scenario::Nonlinear, n, 1)).unwrap().panel).0;
        let specs = vec![KernelSpec::poly(2); panel.periods()];
        for exec in STRATEGIES {
            group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), n), &panel, |b, p| {
                b.iter(|| period_grams(black_box(p), &specs, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn replications(c: &mut Criterion) {
    let mut group = c.benchmark_group("replicate");
    group.sample_size(10);
    let cfg = StudyConfig {
        methods: vec![SimMethod::KowK1, SimMethod::Ols],
        n_grid: vec![200],
        reps: 16,
        ..StudyConfig::default()
    };
    for exec in STRATEGIES {
        group.bench_function(format!("{exec:?}"), |b| b.iter(|| replicate(black_box(&cfg), exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, grams, replications);
criterion_main!(benches);
