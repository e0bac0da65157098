use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gauss_semigroup::{
    closed_form_c0, closed_form_d0, compose, integrate, matrix_exponential, random_operator_set,
    state_at, StepControl,
};

const DIMS: [usize; 3] = [2, 8, 32];

fn expm(c: &mut Criterion) {
    let mut g = c.benchmark_group("matrix_exponential");
    for n in DIMS {
        let ops = random_operator_set(n, 1, true, true).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &ops.d, |b, d| {
            b.iter(|| matrix_exponential(black_box(d), 1.0).unwrap())
        });
    }
    g.finish();
}

fn flow(c: &mut Criterion) {
    let mut g = c.benchmark_group("rk4_flow_1000_steps");
    g.sample_size(20);
    for n in DIMS {
        let ops = random_operator_set(n, 2, true, true).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &ops, |b, ops| {
            b.iter(|| integrate(black_box(ops), 1.0, StepControl::default()).unwrap())
        });
    }
    g.finish();
}

fn closed_forms(c: &mut Criterion) {
    let mut g = c.benchmark_group("closed_form");
    for n in DIMS {
        let no_c = random_operator_set(n, 3, false, true).unwrap();
        let no_d = random_operator_set(n, 3, true, false).unwrap();
        g.bench_with_input(BenchmarkId::new("c_zero", n), &no_c, |b, ops| {
            b.iter(|| closed_form_c0(black_box(ops), 1.0).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("d_zero", n), &no_d, |b, ops| {
            b.iter(|| closed_form_d0(black_box(ops), 1.0).unwrap())
        });
    }
    g.finish();
}

fn composition(c: &mut Criterion) {
    let mut g = c.benchmark_group("compose");
    for n in DIMS {
        let ops = random_operator_set(n, 4, true, true).unwrap();
        let a = state_at(&ops, 0.3).unwrap().kernel();
        let k = state_at(&ops, 0.7).unwrap().kernel();
        g.bench_with_input(BenchmarkId::from_parameter(n), &(a, k), |b, (a, k)| {
            b.iter(|| compose(black_box(a), black_box(k)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, expm, flow, closed_forms, composition);
criterion_main!(benches);
