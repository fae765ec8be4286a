use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use circadian_mfg::ergodic::{solve_alternating, Method, SolverOptions};
use circadian_mfg::operators::build_transport_operator;
use circadian_mfg::recovery::{run_recovery, RecoveryOptions};
use circadian_mfg::{circular_w2, ModelParams, PeriodicGrid, Scheme};
use circadian_mfg_bench::{bump, reference_solution};

fn operator_apply(c: &mut Criterion) {
    let e = reference_solution(120, Scheme::Centered);
    let grid = e.grid();
    let op = build_transport_operator(&grid, &e.params, &e.beta, Scheme::Centered);
    let mut out = vec![0.0; 120];
    c.bench_function("transpose apply n=120", |b| {
        b.iter(|| op.apply_transpose_into(black_box(&e.mu), &mut out))
    });
}

fn wasserstein(c: &mut Criterion) {
    let grid = PeriodicGrid::new(120).unwrap();
    let a = bump(&grid, 0.0);
    let b = bump(&grid, 2.0);
    c.bench_function("circular W2 n=120", |bch| {
        bch.iter(|| circular_w2(black_box(&a), black_box(&b), &grid).unwrap())
    });
}

fn method1(c: &mut Criterion) {
    let grid = PeriodicGrid::new(120).unwrap();
    let opts = SolverOptions::for_method(Method::Alternating);
    let params = ModelParams::reference();
    let mut group = c.benchmark_group("stationary");
    group.sample_size(10);
    group.bench_function("alternating n=120", |b| {
        b.iter(|| solve_alternating(&grid, &params, Scheme::Centered, &opts).unwrap())
    });
    group.finish();
}

fn recovery_day(c: &mut Criterion) {
    let e = reference_solution(120, Scheme::Centered);
    let opts = RecoveryOptions {
        horizon_hours: 24.0,
        ..RecoveryOptions::default()
    };
    let p = 9.0 * circadian_mfg::grid::SUN_FREQ;
    c.bench_function("recovery one day n=120", |b| {
        b.iter(|| run_recovery(&e, p, &opts).unwrap())
    });
}

criterion_group!(benches, operator_apply, wasserstein, method1, recovery_day);
criterion_main!(benches);
