use benignlab::cnn::{evaluate, gd_step};
use benignlab::decomposition::Basis;
use benignlab::evaluation::test_error;
use benignlab::trainer::{train_from, TrainConfig};
use benignlab_bench::reference_setup;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn gd_step_by_dim(c: &mut Criterion) {
    let mut group = c.benchmark_group("gd_step");
    for d in [100, 400, 1100] {
        let (ds, w) = reference_setup(d, 5.0);
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| gd_step(black_box(&w), &ds, 0.1).unwrap())
        });
    }
    group.finish();
}

fn forward_batch(c: &mut Criterion) {
    let (ds, w) = reference_setup(100, 5.0);
    c.bench_function("evaluate_batch_d100", |b| b.iter(|| evaluate(black_box(&w), &ds).unwrap()));
}

fn full_run(c: &mut Criterion) {
    let (ds, w) = reference_setup(100, 5.0);
    let cfg = TrainConfig {
        m: 10,
        eta: 0.1,
        sigma_0: 0.01,
        max_iters: 100,
        epsilon: 1e-6,
        record_every: 1,
        init_seed: 2,
    };
    c.bench_function("train_100_iters_d100", |b| {
        b.iter(|| train_from(&ds, &cfg, w.clone(), &mut [], None).unwrap())
    });
}

fn recovery(c: &mut Criterion) {
    let (ds, w) = reference_setup(100, 5.0);
    let w1 = gd_step(&w, &ds, 0.1).unwrap();
    c.bench_function("basis_factor_d100", |b| b.iter(|| Basis::of(black_box(&ds)).unwrap()));
    let basis = Basis::of(&ds).unwrap();
    c.bench_function("recover_coefficients_d100", |b| b.iter(|| basis.recover(black_box(&w1), &w).unwrap()));
}

fn evaluation(c: &mut Criterion) {
    let (ds, w) = reference_setup(100, 5.0);
    c.bench_function("test_error_1000", |b| b.iter(|| test_error(black_box(&w), &ds.config, 1000, 3).unwrap()));
}

criterion_group!(benches, gd_step_by_dim, forward_batch, full_run, recovery, evaluation);
criterion_main!(benches);
