//! Throughput of the data-parallel Monte Carlo kernels.
//!
//! With the default `parallel` feature each benchmark runs twice: on the
//! default rayon pool and pinned to one worker, so the parallel speedup is
//! visible in one report. Building with `--no-default-features` benches
//! the plain sequential fallback under the same ids.

use criterion::{criterion_group, criterion_main, Criterion};
use dpl_core::constraints::ConstraintSet;
use dpl_core::market::MarketModel;
use dpl_core::paths::{generate_paths, simulate_wealth};
use dpl_core::solvers::solve_power;
use dpl_core::verify::check_fbsde_residuals;
use dpl_core::{Matrix, Vector};
use std::hint::black_box;

const N_PATHS: usize = 4_000;
const STEPS: usize = 252;

fn market() -> MarketModel {
    MarketModel::constant(
        1.0,
        1.0,
        STEPS,
        0.05,
        Vector::from_element(1, 0.10),
        Matrix::from_element(1, 1, 0.2),
    )
    .unwrap()
}

fn run_modes<F: Fn() + Sync + Send>(c: &mut Criterion, name: &str, f: F) {
    let mut group = c.benchmark_group(name);
    group.sample_size(10);
    group.bench_function("default_pool", |b| b.iter(&f));
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        group.bench_function("single_thread", |b| b.iter(|| single.install(&f)));
    }
    group.finish();
}

fn bench_generate(c: &mut Criterion) {
    let m = market();
    run_modes(c, "generate_paths", || {
        black_box(generate_paths(&m, N_PATHS, 7).unwrap());
    });
}

fn bench_simulate(c: &mut Criterion) {
    let m = market();
    let bundle = generate_paths(&m, N_PATHS, 7).unwrap();
    let pi = vec![Vector::from_element(1, 1.25); STEPS];
    run_modes(c, "simulate_wealth", || {
        black_box(simulate_wealth(&m, &pi, &bundle).unwrap());
    });
}

fn bench_verify(c: &mut Criterion) {
    let m = market();
    let bundle = generate_paths(&m, N_PATHS, 7).unwrap();
    let sol = solve_power(&m, &ConstraintSet::full_space(1), 0.5).unwrap();
    run_modes(c, "fbsde_verification", || {
        black_box(check_fbsde_residuals(&m, &sol, &bundle, None).unwrap());
    });
}

criterion_group!(benches, bench_generate, bench_simulate, bench_verify);
criterion_main!(benches);
