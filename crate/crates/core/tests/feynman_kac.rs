mod common;

use std::sync::Arc;

use common::*;
use gauss_semigroup::kernel::GaussianMeasure;
use gauss_semigroup::{
    apply_to_initial, fk_evolve, fk_kernel_mass, state_at, validate_operator_set, FkOptions, Growth,
    InitialMeasure, Matrix, OperatorSet, Potential, Region, SymMatrix, TestFunction, TimeGrid,
    Vector,
};
use num_complex::Complex64;

fn brownian() -> OperatorSet {
    validate_operator_set(SymMatrix::identity(1), SymMatrix::zeros(1), Matrix::zeros(1, 1), 0.0).unwrap()
}

fn opts(samples: usize, seed: u64) -> FkOptions {
    FkOptions {
        samples,
        seed,
        threads: None,
        experimental_weighted_base: false,
    }
}

#[test]
fn cosine_potential_matches_gauss_hermite_tensor() {
    let (amp, k, x, t) = (0.8, 2.0, 0.2, 0.6);
    let v = Potential::bounded_cosine(amp, Vector::from_element(1, k));
    let grid = TimeGrid::uniform(t, 2).unwrap();
    let h = t / 2.0;
    let pot = |q: f64| amp * (k * q).cos();
    let (z, w) = gauss_hermite_normal(60);
    let mut oracle = 0.0;
    for (z1, w1) in z.iter().zip(&w) {
        for (z2, w2) in z.iter().zip(&w) {
            let q1 = x + h.sqrt() * z1;
            let q2 = q1 + h.sqrt() * z2;
            let log = 0.5 * h * pot(x) + h * pot(q1) + 0.5 * h * pot(q2);
            oracle += w1 * w2 * log.exp();
        }
    }
    let est = fk_kernel_mass(&brownian(), &v, &vec1(x), t, &Region::Whole, &grid, &opts(100_000, 3)).unwrap();
    assert!((est.estimate - oracle).abs() < 3.0 * est.stderr, "{} vs {oracle}", est.estimate);
    assert_eq!(est.estimate_im, 0.0);
}

#[test]
fn quadratic_potential_matches_mehler_mass() {
    let c = 1.5;
    let v = Potential::quadratic(SymMatrix::from_diagonal(&[c]), 0.0).unwrap();
    let mehler = validate_operator_set(SymMatrix::identity(1), SymMatrix::from_diagonal(&[c]), Matrix::zeros(1, 1), 0.0).unwrap();
    let (t, x) = (0.8, 0.7);
    let grid = TimeGrid::uniform(t, 200).unwrap();
    let est = fk_kernel_mass(&brownian(), &v, &vec1(x), t, &Region::Whole, &grid, &opts(20_000, 5)).unwrap();
    let exact = state_at(&mehler, t).unwrap().kernel().mass(&vec1(x));
    assert!((est.estimate - exact).abs() < 3.0 * est.stderr);
}

#[test]
fn terminal_set_restricts_the_mass() {
    let v = Potential::quadratic(SymMatrix::from_diagonal(&[1.0]), 0.0).unwrap();
    let mehler = validate_operator_set(SymMatrix::identity(1), SymMatrix::identity(1), Matrix::zeros(1, 1), 0.0).unwrap();
    let t = 1.0;
    let grid = TimeGrid::uniform(t, 200).unwrap();
    let region = Region::Box { lower: vec![0.0], upper: vec![f64::INFINITY] };
    let est = fk_kernel_mass(&brownian(), &v, &vec1(0.0), t, &region, &grid, &opts(20_000, 6)).unwrap();
    // symmetric about zero from x = 0
    let half = 0.5 * state_at(&mehler, t).unwrap().kernel().mass(&vec1(0.0));
    assert!((est.estimate - half).abs() < 3.0 * est.stderr);
}

#[test]
fn evolved_gaussian_initial_measure() {
    let c = 1.0;
    let v = Potential::quadratic(SymMatrix::from_diagonal(&[c]), 0.0).unwrap();
    let mehler = validate_operator_set(SymMatrix::identity(1), SymMatrix::from_diagonal(&[c]), Matrix::zeros(1, 1), 0.0).unwrap();
    let t = 0.7;
    let nu0 = InitialMeasure::Gaussian(GaussianMeasure::new(vec1(0.3), SymMatrix::from_diagonal(&[0.2])).unwrap());
    let tests = vec![
        TestFunction::One,
        TestFunction::FourierRe { y: vec![1.2] },
        TestFunction::FourierIm { y: vec![1.2] },
    ];
    let grid = TimeGrid::uniform(t, 200).unwrap();
    let est = fk_evolve(&brownian(), &v, &nu0, t, &tests, &grid, &opts(20_000, 7)).unwrap();
    let exact = apply_to_initial(&state_at(&mehler, t).unwrap().kernel(), &nu0).unwrap();
    let phi = exact.characteristic_functional(&vec1(1.2));
    for (e, want) in est.iter().zip([exact.total_mass(), phi.re, phi.im]) {
        assert!((e.estimate - want).abs() < 3.0 * e.stderr, "{} vs {want}", e.estimate);
    }
}

#[test]
fn time_dependent_potential_is_exact() {
    let v = Potential::tabulated(
        Arc::new(|t, _: &Vector| Complex64::new(t, 0.0)),
        Growth { c1: 2.0, c2: 2.0, r: 0.0 },
    )
    .unwrap();
    let grid = TimeGrid::uniform(2.0, 40).unwrap();
    let est = fk_kernel_mass(&brownian(), &v, &vec1(0.0), 2.0, &Region::Whole, &grid, &opts(100, 1)).unwrap();
    assert!((est.estimate - 2f64.exp()).abs() < 1e-12);
    assert!(est.stderr < 1e-12);
}

#[test]
fn complex_potential_keeps_the_phase() {
    let v = Potential::tabulated(
        Arc::new(|_, _: &Vector| Complex64::new(0.0, 1.0)),
        Growth { c1: 1.0, c2: 0.0, r: 0.0 },
    )
    .unwrap();
    let grid = TimeGrid::uniform(0.5, 10).unwrap();
    let est = fk_kernel_mass(&brownian(), &v, &vec1(0.0), 0.5, &Region::Whole, &grid, &opts(100, 1)).unwrap();
    let want = Complex64::new(0.0, 0.5).exp();
    assert!((est.value() - want).norm() < 1e-12);
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let v = Potential::bounded_cosine(0.5, Vector::from_element(1, 1.0));
    let grid = TimeGrid::uniform(1.0, 50).unwrap();
    let run = |threads| {
        let mut o = opts(5000, 42);
        o.threads = threads;
        fk_kernel_mass(&brownian(), &v, &vec1(0.1), 1.0, &Region::Whole, &grid, &o).unwrap()
    };
    let one = run(Some(1));
    assert_eq!(one, run(Some(3)));
    assert_eq!(one, run(None));
}

#[test]
fn overflowing_paths_are_counted() {
    let v = Potential::quadratic(SymMatrix::from_diagonal(&[-4000.0]), 0.0).unwrap();
    let grid = TimeGrid::uniform(1.0, 20).unwrap();
    let est = fk_kernel_mass(&brownian(), &v, &vec1(0.0), 1.0, &Region::Whole, &grid, &opts(1000, 2)).unwrap();
    assert!(est.overflow_fraction > 0.0 && est.overflow_fraction < 1.0);
}
