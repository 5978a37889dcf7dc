//! One-thread pool against the default rayon pool on the hot paths.
//! `cargo bench --no-default-features` measures the sequential build.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPool;
use rbsde_core::forward::{simulate, TimeGrid};
use rbsde_core::model::catalog;
use rbsde_core::oracle::{solve_switching_dp, LatticeSpec};
use rbsde_core::regress::{fit_conditional_expectation, BasisSpec};
use rbsde_core::solver::{solve_penalized, solve_reflected_scheme, Picard};

fn pools() -> Vec<(String, ThreadPool)> {
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let n = default.current_num_threads();
    vec![
        (
            "1-thread".to_string(),
            rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap(),
        ),
        (format!("pool-{n}"), default),
    ]
}

fn bench_all(c: &mut Criterion) {
    let spec = Arc::new(catalog::get(catalog::TWOMODE_SWITCH).unwrap());
    let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let bundle = Arc::new(simulate(&spec, &grid, &[0.5], 20_000, 1).unwrap());
    let basis = BasisSpec::default();
    let lattice = LatticeSpec::around(&spec, &grid, 0.5, 401).unwrap();
    let xs: Vec<f64> = bundle.states_at(10).to_vec();
    let ys: Vec<f64> = xs.iter().map(|x| x.max(0.0)).collect();

    let mut group = c.benchmark_group("twomode");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("simulate", &name), |b| {
            b.iter(|| pool.install(|| simulate(&spec, &grid, &[0.5], 20_000, 1).unwrap()))
        });
        group.bench_function(BenchmarkId::new("regression", &name), |b| {
            b.iter(|| pool.install(|| fit_conditional_expectation(&basis, black_box(&xs), 1, &ys, 0.0).unwrap()))
        });
        group.bench_function(BenchmarkId::new("penalized", &name), |b| {
            b.iter(|| pool.install(|| solve_penalized(&spec, &bundle, &basis, 64.0, Picard::default()).unwrap()))
        });
        group.bench_function(BenchmarkId::new("reflected", &name), |b| {
            b.iter(|| pool.install(|| solve_reflected_scheme(&spec, &bundle, &basis, Picard::default()).unwrap()))
        });
        group.bench_function(BenchmarkId::new("lattice-dp", &name), |b| {
            b.iter(|| pool.install(|| solve_switching_dp(&spec, &lattice, &grid).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_all);
criterion_main!(benches);
