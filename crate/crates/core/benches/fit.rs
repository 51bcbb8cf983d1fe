//! Parallel against sequential execution of the hot paths. The sequential
//! arm runs the same code on a one-thread pool; building with
//! `--no-default-features` removes rayon entirely.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lcga::simulate::{simulate, ScenarioConfig};
use lcga::{
    categorize, mixture_loglik_grad, multi_start_fit, par, CategoryMap, Family, FitConfig, LongitudinalDataset,
    ModelSpec,
};

fn cohort() -> LongitudinalDataset {
    let cfg = ScenarioConfig::scenario1().with_counts([300, 100, 100]).with_seed(1);
    categorize(&simulate(&cfg).unwrap(), &CategoryMap::default()).unwrap()
}

fn spec() -> ModelSpec {
    ModelSpec::new(Family::CumulativeProbit { n_categories: 3 }, 3, 2, true).unwrap()
}

const ARMS: [(&str, Option<usize>); 2] = [("parallel", None), ("sequential", Some(1))];

fn bench_fit(c: &mut Criterion) {
    let data = cohort();
    let spec = spec();
    let config = FitConfig {
        n_starts: 4,
        max_iter: 50,
        ..FitConfig::default()
    };
    let mut group = c.benchmark_group("multi_start_fit_k3");
    group.sample_size(10);
    for (name, workers) in ARMS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(workers, || multi_start_fit(&spec, black_box(&data), &config).unwrap()))
        });
    }
    group.finish();
}

fn bench_gradient(c: &mut Criterion) {
    let data = cohort();
    let spec = spec();
    let config = FitConfig {
        n_starts: 1,
        max_iter: 5,
        ..FitConfig::default()
    };
    let params = multi_start_fit(&spec, &data, &config).unwrap().params;
    let mut group = c.benchmark_group("mixture_loglik_grad_k3");
    for (name, workers) in ARMS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_workers(workers, || {
                    mixture_loglik_grad(&spec, &params, black_box(&data)).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_fit, bench_gradient);
criterion_main!(benches);
