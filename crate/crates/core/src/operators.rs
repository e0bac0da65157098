//! Dense operator arithmetic at a fixed truncation dimension.
//!
//! Everything here is a pure function of its inputs. Matrices are
//! `nalgebra::DMatrix<f64>`; symmetric operators (B, C, P, Q) are wrapped in
//! [`SymMatrix`], which keeps its storage exactly symmetric.
//!
//! Even functions of `sqrt(X)` (`cosh`, `sech`, `tanh(t sqrt X)/sqrt X`) are
//! evaluated as entire power series in `X` through the exponential of the
//! `2n x 2n` block matrix `[[0, I], [X, 0]]`: its top-left block is
//! `cosh(t sqrt X)` and its top-right block is `sinh(t sqrt X)/sqrt X`.
//! No square root of `X` is ever formed, so singular `B` or `C` need no
//! special handling.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Numerical thresholds shared by the validators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Eigenvalues down to `-psd_rel * ||M||_2` are accepted as nonnegative.
    pub psd_rel: f64,
    /// Maximum relative asymmetry `max|M - M^T| / max|M|` accepted on input.
    pub symmetry_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            psd_rel: 1e-10,
            symmetry_rel: 1e-12,
        }
    }
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `max|a - b| / max|b|`, falling back to the absolute difference when `b == 0`.
pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    let diff = max_abs(&(a - b));
    let scale = max_abs(b);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn check_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what })
    }
}

fn check_square(m: &Matrix, what: &'static str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            what,
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(Error::InvalidArgument(format!("{what} has dimension 0")));
    }
    Ok(m.nrows())
}

/// Symmetric real matrix with exactly symmetric storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Accepts `m` if its relative asymmetry is within the default tolerance
    /// and stores the symmetric part.
    pub fn new(m: Matrix) -> Result<Self> {
        Self::with_tolerance(m, "matrix", &Tolerances::default())
    }

    pub fn with_tolerance(m: Matrix, what: &'static str, tol: &Tolerances) -> Result<Self> {
        check_square(&m, what)?;
        check_finite(&m, what)?;
        let asym = asymmetry(&m);
        if asym > tol.symmetry_rel {
            return Err(Error::NotSymmetric {
                what,
                asymmetry: asym,
            });
        }
        Ok(Self::symmetrize(m))
    }

    /// Projects onto the symmetric part without checking.
    pub fn symmetrize(m: Matrix) -> Self {
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn zeros(n: usize) -> Self {
        Self(Matrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(Matrix::from_diagonal(&Vector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn eigenvalues(&self) -> Vector {
        SymmetricEigen::new(self.0.clone()).eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }

    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues().amax()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    /// Fails with `NotPsd` if an eigenvalue lies below `-psd_rel * ||M||_2`.
    pub fn check_psd(&self, what: &'static str, tol: &Tolerances) -> Result<()> {
        let ev = self.eigenvalues();
        let threshold = -tol.psd_rel * ev.amax();
        let min = ev.min();
        if min < threshold {
            return Err(Error::NotPsd {
                what,
                min_eigenvalue: min,
                threshold,
            });
        }
        Ok(())
    }

    /// Symmetric PSD square root; negative rounding noise is clipped to zero.
    pub fn psd_sqrt(&self) -> Matrix {
        let eig = SymmetricEigen::new(self.0.clone());
        let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        &eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose()
    }

    /// Quadratic form `(M x, x)`.
    pub fn quad(&self, x: &Vector) -> f64 {
        x.dot(&(&self.0 * x))
    }
}

impl std::ops::Deref for SymMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

fn asymmetry(m: &Matrix) -> f64 {
    let scale = max_abs(m);
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&(m - m.transpose())) / scale
}

/// Generators `(B, C, D, alpha)` of the evolution equation at dimension `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSet {
    pub b: SymMatrix,
    pub c: SymMatrix,
    pub d: Matrix,
    pub alpha: f64,
    trace_b: f64,
    trace_d: f64,
}

impl OperatorSet {
    pub fn dim(&self) -> usize {
        self.b.dim()
    }

    pub fn trace_b(&self) -> f64 {
        self.trace_b
    }

    pub fn trace_d(&self) -> f64 {
        self.trace_d
    }

    pub fn zero(n: usize) -> Self {
        Self {
            b: SymMatrix::zeros(n),
            c: SymMatrix::zeros(n),
            d: Matrix::zeros(n, n),
            alpha: 0.0,
            trace_b: 0.0,
            trace_d: 0.0,
        }
    }

    /// Harmonic-oscillator generators in units where the Planck constant is
    /// `h`: `B = diag(1/(h m_j))`, `C = diag(k_j/h)`, `D = 0`.
    pub fn oscillator(h: f64, masses: &[f64], stiffness: &[f64]) -> Result<Self> {
        if masses.len() != stiffness.len() {
            return Err(Error::DimensionMismatch {
                what: "stiffness",
                expected: masses.len(),
                got: stiffness.len(),
            });
        }
        if h <= 0.0 || masses.iter().any(|m| *m <= 0.0) {
            return Err(Error::InvalidArgument(
                "h and masses must be positive".into(),
            ));
        }
        let b: Vec<f64> = masses.iter().map(|m| 1.0 / (h * m)).collect();
        let c: Vec<f64> = stiffness.iter().map(|k| k / h).collect();
        let n = masses.len();
        validate_operator_set(
            SymMatrix::from_diagonal(&b),
            SymMatrix::from_diagonal(&c),
            Matrix::zeros(n, n),
            0.0,
        )
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

pub fn validate_operator_set(
    b: SymMatrix,
    c: SymMatrix,
    d: Matrix,
    alpha: f64,
) -> Result<OperatorSet> {
    validate_operator_set_with(b, c, d, alpha, &Tolerances::default())
}

pub fn validate_operator_set_with(
    b: SymMatrix,
    c: SymMatrix,
    d: Matrix,
    alpha: f64,
    tol: &Tolerances,
) -> Result<OperatorSet> {
    let n = b.dim();
    for (what, got) in [("C", c.dim()), ("D rows", d.nrows()), ("D cols", d.ncols())] {
        if got != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: n,
                got,
            });
        }
    }
    check_finite(&d, "D")?;
    if !alpha.is_finite() {
        return Err(Error::NonFinite { what: "alpha" });
    }
    b.check_psd("B", tol)?;
    c.check_psd("C", tol)?;
    let trace_b = b.trace();
    let trace_d = d.trace();
    Ok(OperatorSet {
        b,
        c,
        d,
        alpha,
        trace_b,
        trace_d,
    })
}

/// Operator description as it appears in configuration files.
///
/// Accepts a dense row-major array, `{"diag": [...]}`, or
/// `{"power_law": {"p": 2.0, "n": 8}}` meaning eigenvalues `k^-p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorSpec {
    Dense(Vec<Vec<f64>>),
    Diag { diag: Vec<f64> },
    PowerLaw { power_law: PowerLaw },
    Zero { zero: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub p: f64,
    pub n: usize,
}

impl OperatorSpec {
    pub fn to_matrix(&self) -> Result<Matrix> {
        match self {
            OperatorSpec::Dense(rows) => {
                let n = rows.len();
                if n == 0 {
                    return Err(Error::InvalidArgument("empty dense matrix".into()));
                }
                for r in rows {
                    if r.len() != n {
                        return Err(Error::DimensionMismatch {
                            what: "dense row",
                            expected: n,
                            got: r.len(),
                        });
                    }
                }
                let m = Matrix::from_fn(n, n, |i, j| rows[i][j]);
                check_finite(&m, "dense matrix")?;
                Ok(m)
            }
            OperatorSpec::Diag { diag } => {
                if diag.is_empty() {
                    return Err(Error::InvalidArgument("empty diagonal".into()));
                }
                let m = Matrix::from_diagonal(&Vector::from_column_slice(diag));
                check_finite(&m, "diagonal")?;
                Ok(m)
            }
            OperatorSpec::PowerLaw { power_law } => {
                if power_law.n == 0 || !power_law.p.is_finite() {
                    return Err(Error::InvalidArgument("invalid power law".into()));
                }
                let d = Vector::from_fn(power_law.n, |k, _| ((k + 1) as f64).powf(-power_law.p));
                Ok(Matrix::from_diagonal(&d))
            }
            OperatorSpec::Zero { zero } => {
                if *zero == 0 {
                    return Err(Error::InvalidArgument("zero-dimensional operator".into()));
                }
                Ok(Matrix::zeros(*zero, *zero))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Matrix exponential: scaling and squaring with Pade approximants
// (degrees 3, 5, 7, 9, 13), Higham 2005.

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068),
];
const THETA13: f64 = 5.371920351148152;

fn norm1(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn pade_low(a: &Matrix, coeffs: &[f64]) -> (Matrix, Matrix) {
    let n = a.nrows();
    let ident = Matrix::identity(n, n);
    let a2 = a * a;
    let mut even = ident.clone() * coeffs[0];
    let mut odd = ident * coeffs[1];
    let mut pow = a2.clone();
    for k in 1..coeffs.len() / 2 {
        even += &pow * coeffs[2 * k];
        odd += &pow * coeffs[2 * k + 1];
        pow = &pow * &a2;
    }
    (a * odd, even)
}

fn pade13(a: &Matrix) -> (Matrix, Matrix) {
    let n = a.nrows();
    let b = &PADE13;
    let ident = Matrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];
    (u, v)
}

fn pade_solve(u: Matrix, v: Matrix) -> Result<Matrix> {
    let p = &v + &u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| Error::InvalidArgument("singular Pade denominator".into()))
}

/// `exp(t M)` by scaling and squaring.
pub fn matrix_exponential(m: &Matrix, t: f64) -> Result<Matrix> {
    check_square(m, "matrix")?;
    check_finite(m, "matrix")?;
    if !t.is_finite() {
        return Err(Error::NonFinite { what: "time" });
    }
    let a = m * t;
    let nrm = norm1(&a);
    for (deg, theta) in THETA {
        if nrm <= theta {
            let coeffs: &[f64] = match deg {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            let (u, v) = pade_low(&a, coeffs);
            return pade_solve(u, v);
        }
    }
    let squarings = if nrm > THETA13 {
        (nrm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a * 2f64.powi(-squarings);
    let (u, v) = pade13(&scaled);
    let mut e = pade_solve(u, v)?;
    for _ in 0..squarings {
        e = &e * &e;
    }
    check_finite(&e, "matrix exponential")?;
    Ok(e)
}

// ---------------------------------------------------------------------------
// Even functions of sqrt(X).

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvenFn {
    /// `cosh(t sqrt X)`
    Cosh,
    /// `cosh(t sqrt X)^-1`
    Sech,
    /// `tanh(t sqrt X) (sqrt X)^-1`, equal to `t I` at `X = 0`
    TanhOverSqrt,
}

/// Checks that the spectrum of `x` has no real part below `-psd_rel * ||x||`.
pub fn check_nonnegative_spectrum(x: &Matrix, tol: &Tolerances) -> Result<()> {
    let scale = max_abs(x);
    if scale == 0.0 {
        return Ok(());
    }
    let ev = x.complex_eigenvalues();
    let min_real = ev.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    if min_real < -tol.psd_rel * scale * x.nrows() as f64 {
        return Err(Error::NegativeSpectrum { min_real });
    }
    Ok(())
}

/// `(cosh(t sqrt X), sinh(t sqrt X)/sqrt X)` from one block exponential.
pub fn cosh_sinhc_pair(x: &Matrix, t: f64) -> Result<(Matrix, Matrix)> {
    let n = check_square(x, "X")?;
    check_finite(x, "X")?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be finite and >= 0, got {t}")));
    }
    // Balance the off-diagonal blocks: [[0, k I], [X/k, 0]] has the same
    // even/odd series up to a factor k in the top-right block.
    let k = max_abs(x).sqrt().max(1.0);
    let mut h = Matrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        h[(i, n + i)] = k;
    }
    h.view_mut((n, 0), (n, n)).copy_from(&(x / k));
    let e = matrix_exponential(&h, t).map_err(|_| Error::SeriesDivergence {
        reason: "block exponential overflowed".into(),
    })?;
    let cosh = e.view((0, 0), (n, n)).into_owned();
    let sinhc = e.view((0, n), (n, n)).into_owned() / k;
    if !cosh.iter().chain(sinhc.iter()).all(|v| v.is_finite()) {
        return Err(Error::SeriesDivergence {
            reason: "non-finite series value".into(),
        });
    }
    Ok((cosh, sinhc))
}

/// `f(t sqrt X)` for an even `f`, with `X` having nonnegative real spectrum
/// (typically `X = B C` or `C B` for PSD `B`, `C`).
pub fn even_sqrt_function(x: &Matrix, kind: EvenFn, t: f64) -> Result<Matrix> {
    even_sqrt_function_with(x, kind, t, &Tolerances::default())
}

pub fn even_sqrt_function_with(
    x: &Matrix,
    kind: EvenFn,
    t: f64,
    tol: &Tolerances,
) -> Result<Matrix> {
    check_square(x, "X")?;
    check_finite(x, "X")?;
    check_nonnegative_spectrum(x, tol)?;
    let (cosh, sinhc) = cosh_sinhc_pair(x, t)?;
    match kind {
        EvenFn::Cosh => Ok(cosh),
        EvenFn::Sech => invert(cosh),
        EvenFn::TanhOverSqrt => {
            let lu = cosh.lu();
            lu.solve(&sinhc).ok_or_else(|| Error::SeriesDivergence {
                reason: "cosh block is singular".into(),
            })
        }
    }
}

fn invert(m: Matrix) -> Result<Matrix> {
    m.try_inverse().ok_or_else(|| Error::SeriesDivergence {
        reason: "cosh block is singular".into(),
    })
}

/// `f(t sqrt(L R))` for symmetric PSD `L`, `R`, through the eigendecomposition
/// of the symmetric similarity `L^{1/2} R L^{1/2}`:
/// `f(L R) = L^{1/2} f(L^{1/2} R L^{1/2}) L^{-1/2}`.
///
/// Falls back to the block-exponential series when `L` is numerically
/// singular (condition number above `1e8`).
pub fn even_sqrt_function_factored(
    left: &SymMatrix,
    right: &SymMatrix,
    kind: EvenFn,
    t: f64,
) -> Result<Matrix> {
    if left.dim() != right.dim() {
        return Err(Error::DimensionMismatch {
            what: "right factor",
            expected: left.dim(),
            got: right.dim(),
        });
    }
    let tol = Tolerances::default();
    left.check_psd("left factor", &tol)?;
    right.check_psd("right factor", &tol)?;
    let eig = SymmetricEigen::new(left.as_matrix().clone());
    let max_ev = eig.eigenvalues.amax();
    let min_ev = eig.eigenvalues.min();
    if max_ev == 0.0 || min_ev <= max_ev * 1e-8 {
        return even_sqrt_function(&(left.as_matrix() * right.as_matrix()), kind, t);
    }
    let v = &eig.eigenvectors;
    let root = v * Matrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * v.transpose();
    let inv_root = v * Matrix::from_diagonal(&eig.eigenvalues.map(|e| 1.0 / e.sqrt())) * v.transpose();
    let sym = SymMatrix::symmetrize(&root * right.as_matrix() * &root);
    let inner = SymmetricEigen::new(sym.into_matrix());
    let f = inner.eigenvalues.map(|lam| scalar_even(kind, lam.max(0.0), t));
    let fs = &inner.eigenvectors * Matrix::from_diagonal(&f) * inner.eigenvectors.transpose();
    Ok(root * fs * inv_root)
}

/// Scalar `f(t sqrt(lambda))` for `lambda >= 0`.
pub fn scalar_even(kind: EvenFn, lambda: f64, t: f64) -> f64 {
    let z = t * lambda.sqrt();
    match kind {
        EvenFn::Cosh => z.cosh(),
        EvenFn::Sech => 1.0 / z.cosh(),
        EvenFn::TanhOverSqrt => {
            if lambda == 0.0 {
                t
            } else {
                z.tanh() / lambda.sqrt()
            }
        }
    }
}

/// `sum_k log cosh(t sqrt(lambda_k))` over the spectrum of `B C`, computed from
/// the symmetric matrix `C^{1/2} B C^{1/2}` which shares that spectrum.
pub fn log_det_cosh(b: &SymMatrix, c: &SymMatrix, t: f64) -> f64 {
    let root = c.psd_sqrt();
    let sym = SymMatrix::symmetrize(&root * b.as_matrix() * &root);
    sym.eigenvalues()
        .iter()
        .map(|lam| log_cosh(t * lam.max(0.0).sqrt()))
        .sum()
}

fn log_cosh(z: f64) -> f64 {
    let a = z.abs();
    // log cosh z = |z| + log((1 + e^{-2|z|})/2)
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

// ---------------------------------------------------------------------------

/// `int_0^t exp(D^T s) B exp(D s) ds` from the exponential of the block matrix
/// `[[-D^T, B], [0, D]]`, whose top-right block equals
/// `exp(-D^T t) * integral`.
pub fn conjugated_integral(b: &SymMatrix, d: &Matrix, t: f64) -> Result<SymMatrix> {
    let n = b.dim();
    if d.nrows() != n || d.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "D",
            expected: n,
            got: d.nrows(),
        });
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be finite and >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(SymMatrix::zeros(n));
    }
    let mut m = Matrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(-d.transpose()));
    m.view_mut((0, n), (n, n)).copy_from(b.as_matrix());
    m.view_mut((n, n), (n, n)).copy_from(d);
    let e = matrix_exponential(&m, t)?;
    let top_right = e.view((0, n), (n, n)).into_owned();
    let exp_dt = e.view((n, n), (n, n)).into_owned();
    let q = SymMatrix::symmetrize(exp_dt.transpose() * top_right);
    q.check_psd("conjugated integral", &Tolerances::default())?;
    Ok(q)
}
