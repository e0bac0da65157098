#![allow(dead_code)]

use gauss_semigroup::{validate_operator_set, Matrix, OperatorSet, SymMatrix, Vector};
use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    Matrix::from_fn(n, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// `A A^T / n`, scaled.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> SymMatrix {
    let a = normal_matrix(rng, n, 1.0);
    SymMatrix::symmetrize(&a * a.transpose() * (scale / n as f64))
}

pub fn random_ops(rng: &mut ChaCha8Rng, n: usize, with_c: bool, with_d: bool) -> OperatorSet {
    let b = random_psd(rng, n, 1.0);
    let c = if with_c {
        random_psd(rng, n, 1.0)
    } else {
        SymMatrix::zeros(n)
    };
    let d = if with_d {
        normal_matrix(rng, n, 0.5 / (n as f64).sqrt())
    } else {
        Matrix::zeros(n, n)
    };
    let alpha = rng.random_range(-0.5..0.5);
    validate_operator_set(b, c, d, alpha).unwrap()
}

/// Nodes and weights of an `m`-point rule from its Jacobi matrix
/// (Golub-Welsch).
fn golub_welsch(diag: Vec<f64>, off: Vec<f64>, mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let m = diag.len();
    let mut j = Matrix::zeros(m, m);
    for i in 0..m {
        j[(i, i)] = diag[i];
        if i + 1 < m {
            j[(i, i + 1)] = off[i];
            j[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let off = (1..m)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(vec![0.0; m], off, 2.0)
}

/// Gauss-Hermite rule for `int f(z) phi(z) dz` with `phi` the standard
/// normal density.
pub fn gauss_hermite_normal(m: usize) -> (Vec<f64>, Vec<f64>) {
    let off = (1..m).map(|k| (k as f64).sqrt()).collect();
    golub_welsch(vec![0.0; m], off, 1.0)
}

/// Composite Gauss-Legendre quadrature of a matrix-valued function.
pub fn integrate_matrix<F: Fn(f64) -> Matrix>(f: F, a: f64, b: f64, panels: usize) -> Matrix {
    let (x, w) = gauss_legendre(10);
    let h = (b - a) / panels as f64;
    let mut acc = f(a) * 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (xi, wi) in x.iter().zip(&w) {
            acc += f(mid + 0.5 * h * xi) * (0.5 * h * wi);
        }
    }
    acc
}

/// Composite Gauss-Legendre quadrature of a scalar function.
pub fn integrate_scalar<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let (x, w) = gauss_legendre(10);
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (xi, wi) in x.iter().zip(&w) {
            acc += f(mid + 0.5 * h * xi) * 0.5 * h * wi;
        }
    }
    acc
}

/// `int_0^t e^{D^T u} B e^{D u} du` by quadrature, with nalgebra's own
/// matrix exponential.
pub fn conjugated_integral_quadrature(b: &Matrix, d: &Matrix, t: f64) -> Matrix {
    integrate_matrix(
        |u| {
            let e = (d * u).exp();
            e.transpose() * b * &e
        },
        0.0,
        t,
        64,
    )
}

/// `f(B C)` for the D = 0 closed form through the symmetric similarity
/// `B C = C^{-1/2} (C^{1/2} B C^{1/2}) C^{1/2}`, `C` positive definite.
pub fn mehler_by_eigen(b: &Matrix, c: &Matrix, t: f64) -> (f64, Matrix, Matrix, Matrix) {
    let ce = SymmetricEigen::new(c.clone());
    let half = &ce.eigenvectors
        * Matrix::from_diagonal(&ce.eigenvalues.map(f64::sqrt))
        * ce.eigenvectors.transpose();
    let half_inv = half.clone().try_inverse().unwrap();
    let inner = SymmetricEigen::new(&half * b * &half);
    let lam = inner.eigenvalues.map(|v| v.max(0.0));
    let v = &inner.eigenvectors;
    let apply = |f: &dyn Fn(f64) -> f64| -> Matrix {
        let mid = v * Matrix::from_diagonal(&lam.map(f)) * v.transpose();
        &half_inv * mid * &half
    };
    // f(BC) = C^{-1/2} f(C^{1/2} B C^{1/2}) C^{1/2}
    let cosh = apply(&|l: f64| (t * l.sqrt()).cosh());
    let tanhc = apply(&|l: f64| {
        if l == 0.0 {
            t
        } else {
            (t * l.sqrt()).tanh() / l.sqrt()
        }
    });
    let log_det: f64 = lam.iter().map(|l| (t * l.sqrt()).cosh().ln()).sum();
    let sech = cosh.try_inverse().unwrap();
    let p = c * &tanhc;
    let q = &tanhc * b;
    ((-0.5 * log_det).exp(), p, q, sech)
}

/// Classical Mehler kernel for `B = C = 1`, `D = 0`.
pub fn mehler_density(t: f64, x: f64, y: f64) -> f64 {
    let (sh, ch) = (t.sinh(), t.cosh());
    (2.0 * std::f64::consts::PI * sh).powf(-0.5)
        * (-((x * x + y * y) * ch - 2.0 * x * y) / (2.0 * sh)).exp()
}

/// Scalar OU transition `(R, Q)` for `B = b`, `D = d`, `C = 0`.
pub fn scalar_ou(b: f64, d: f64, t: f64) -> (f64, f64) {
    let r = (d * t).exp();
    let q = if d == 0.0 {
        b * t
    } else {
        b * ((2.0 * d * t).exp() - 1.0) / (2.0 * d)
    };
    (r, q)
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

pub fn vec1(x: f64) -> Vector {
    Vector::from_element(1, x)
}
