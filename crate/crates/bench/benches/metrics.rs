use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use xaihealth_bench::sab_fixture;
use xaihealth_core::metrics::{lle_score, randomisation_check};
use xaihealth_core::{Explain, ExplainerSpec, PerturbationConfig};

fn explainers(c: &mut Criterion) {
    let mut group = c.benchmark_group("explain");
    for side in [8, 16, 32] {
        let (ds, model) = sab_fixture(side, 4);
        let inst = &ds.instances[0];
        group.bench_with_input(BenchmarkId::new("gradient_input", side), &side, |b, _| {
            b.iter(|| ExplainerSpec::GradientInput.explain(&model, black_box(&inst.input), 1, &inst.id))
        });
        let occlusion = ExplainerSpec::Occlusion {
            patch: 2,
            baseline: 0.0,
        };
        group.bench_with_input(BenchmarkId::new("occlusion", side), &side, |b, _| {
            b.iter(|| occlusion.explain(&model, black_box(&inst.input), 1, &inst.id))
        });
    }
    group.finish();
}

fn lle(c: &mut Criterion) {
    let (ds, model) = sab_fixture(16, 4);
    let inst = &ds.instances[0];
    let mut group = c.benchmark_group("lle_score");
    for num_samples in [10, 50, 200] {
        let cfg = PerturbationConfig {
            epsilon: 0.1,
            num_samples,
            seed: 3,
        };
        group.bench_with_input(BenchmarkId::from_parameter(num_samples), &cfg, |b, cfg| {
            b.iter(|| {
                lle_score(
                    &model,
                    &ExplainerSpec::GradientInput,
                    &inst.id,
                    black_box(&inst.input),
                    cfg,
                )
            })
        });
    }
    group.finish();
}

fn randomisation(c: &mut Criterion) {
    let (ds, model) = sab_fixture(16, 50);
    c.bench_function("randomisation_check/50x256", |b| {
        b.iter(|| randomisation_check(&model, &ExplainerSpec::GradientInput, black_box(&ds), 7, 0.5))
    });
}

criterion_group!(benches, explainers, lle, randomisation);
criterion_main!(benches);
