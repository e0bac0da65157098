//! Weighted Gaussian kernels `G_x = s exp{-(P x, x)/2} Gamma(Q, R x)`.
//!
//! # Composition
//!
//! Composing `K1 = (s1, P1, Q1, R1)` after `K2 = (s2, P2, Q2, R2)` means
//! integrating `K1(y)` against the measure `K2(x)(dy)`. With `y ~ N(m, Q2)`,
//! `m = R2 x`, the characteristic functional of the result at `z` needs
//!
//! ```text
//! E[exp(-(P1 y, y)/2 + i (R1^T z, y))]
//! ```
//!
//! and the Gaussian identity
//! `E exp(-(A y, y)/2 + (b, y)) = det(I + Q2 A)^{-1/2}
//!     exp{(b - A m, M (b - A m))/2 + (b, m) - (A m, m)/2}`
//! with `M = Q2 (I + A Q2)^{-1}`. Setting `A = P1`, `b = i R1^T z` and
//! collecting terms with `N = (I + Q2 P1)^{-1}` (so `I - M P1 = N` and
//! `P1 - P1 M P1 = P1 N`) gives
//!
//! ```text
//! s = s1 s2 det(I + Q2 P1)^{-1/2}
//! P = P2 + R2^T P1 N R2
//! Q = Q1 + R1 N Q2 R1^T
//! R = R1 N R2
//! ```
//!
//! The same algebra with `K2` replaced by an initial Gaussian `Gamma(S, m)`
//! gives the superposition formulas in [`apply_to_initial`].

use nalgebra::{Cholesky, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{Matrix, SymMatrix, Tolerances, Vector};

/// Condition number above which a covariance is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    pub mean: Vector,
    pub cov: SymMatrix,
}

impl GaussianMeasure {
    pub fn new(mean: Vector, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                what: "mean",
                expected: cov.dim(),
                got: mean.len(),
            });
        }
        cov.check_psd("covariance", &Tolerances::default())?;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `exp(i (m, y) - (S y, y)/2)`
    pub fn characteristic_functional(&self, y: &Vector) -> Complex64 {
        Complex64::new(-0.5 * self.cov.quad(y), self.mean.dot(y)).exp()
    }
}

/// The quadruple `(s, P, Q, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub s: f64,
    pub p: SymMatrix,
    pub q: SymMatrix,
    pub r: Matrix,
}

impl GaussianKernel {
    pub fn new(s: f64, p: SymMatrix, q: SymMatrix, r: Matrix) -> Result<Self> {
        let n = p.dim();
        for (what, got) in [("Q", q.dim()), ("R rows", r.nrows()), ("R cols", r.ncols())] {
            if got != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    got,
                });
            }
        }
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidArgument(format!("kernel mass factor must be positive, got {s}")));
        }
        let tol = Tolerances::default();
        p.check_psd("P", &tol)?;
        q.check_psd("Q", &tol)?;
        Ok(Self { s, p, q, r })
    }

    /// The `t = 0` kernel: `G_x(0) = delta_x`.
    pub fn identity(n: usize) -> Self {
        Self {
            s: 1.0,
            p: SymMatrix::zeros(n),
            q: SymMatrix::zeros(n),
            r: Matrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    /// True when every `G_x` is an atom (`Q == 0`).
    pub fn is_atomic(&self) -> bool {
        self.q.is_zero()
    }

    /// Total mass `G_x(H) = s exp{-(P x, x)/2}`.
    pub fn mass(&self, x: &Vector) -> f64 {
        self.s * (-0.5 * self.p.quad(x)).exp()
    }

    pub fn log_mass(&self, x: &Vector) -> f64 {
        self.s.ln() - 0.5 * self.p.quad(x)
    }

    /// Normalized transition law `Gamma(Q, R x)`.
    pub fn transition(&self, x: &Vector) -> GaussianMeasure {
        GaussianMeasure {
            mean: &self.r * x,
            cov: self.q.clone(),
        }
    }

    /// Maximum entrywise distance over the four parameters.
    pub fn max_param_diff(&self, other: &GaussianKernel) -> f64 {
        let ds = (self.s - other.s).abs();
        let dp = crate::operators::max_abs(&(self.p.as_matrix() - other.p.as_matrix()));
        let dq = crate::operators::max_abs(&(self.q.as_matrix() - other.q.as_matrix()));
        let dr = crate::operators::max_abs(&(&self.r - &other.r));
        ds.max(dp).max(dq).max(dr)
    }
}

/// `s exp{-(P x, x)/2} exp{i (R x, y) - (Q y, y)/2}`
pub fn characteristic_functional(k: &GaussianKernel, x: &Vector, y: &Vector) -> Complex64 {
    let rx = &k.r * x;
    let log = Complex64::new(
        k.s.ln() - 0.5 * k.p.quad(x) - 0.5 * k.q.quad(y),
        rx.dot(y),
    );
    log.exp()
}

/// Cholesky factor of a covariance, failing if its condition number exceeds
/// [`MAX_CONDITION`].
pub(crate) fn covariance_factor(q: &SymMatrix) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let ev = q.eigenvalues();
    let max = ev.amax();
    let min = ev.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(Error::SingularCovariance { condition });
    }
    Cholesky::new(q.as_matrix().clone()).ok_or(Error::SingularCovariance { condition })
}

/// Density of `G_x` with respect to Lebesgue measure, evaluated at `y`.
pub fn density(k: &GaussianKernel, x: &Vector, y: &Vector) -> Result<f64> {
    let chol = covariance_factor(&k.q)?;
    let n = k.dim() as f64;
    let resid = y - &k.r * x;
    let z = chol.l().solve_lower_triangular(&resid).expect("nonsingular factor");
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log = k.log_mass(x)
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * log_det
        - 0.5 * z.norm_squared();
    Ok(log.exp())
}

/// The kernel of `x -> int later(y)(.) earlier(x)(dy)`.
pub fn compose(later: &GaussianKernel, earlier: &GaussianKernel) -> Result<GaussianKernel> {
    let n = later.dim();
    if earlier.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "earlier kernel",
            expected: n,
            got: earlier.dim(),
        });
    }
    let ident = Matrix::identity(n, n);
    let a = &ident + earlier.q.as_matrix() * later.p.as_matrix();
    let lu = a.clone().lu();
    let det = lu.determinant();
    if !(det > 0.0) {
        return Err(Error::NonGaussianComposition {
            reason: format!("det(I + Q2 P1) = {det}"),
        });
    }
    let n_mat = lu.try_inverse().ok_or_else(|| Error::NonGaussianComposition {
        reason: "I + Q2 P1 is singular".into(),
    })?;
    let r = &later.r * &n_mat * &earlier.r;
    let q = later.q.as_matrix() + &later.r * &n_mat * earlier.q.as_matrix() * later.r.transpose();
    let p = earlier.p.as_matrix()
        + earlier.r.transpose() * later.p.as_matrix() * &n_mat * &earlier.r;
    let s = later.s * earlier.s / det.sqrt();
    let tol = Tolerances::default();
    let p = SymMatrix::symmetrize(p);
    let q = SymMatrix::symmetrize(q);
    for (what, m) in [("composed P", &p), ("composed Q", &q)] {
        m.check_psd(what, &tol)
            .map_err(|e| Error::NonGaussianComposition {
                reason: e.to_string(),
            })?;
    }
    Ok(GaussianKernel { s, p, q, r })
}

/// A positive multiple of a Gaussian measure.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGaussian {
    pub mass: f64,
    pub measure: GaussianMeasure,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialMeasure {
    Gaussian(GaussianMeasure),
    /// `sum_i w_i delta_{x_i}`
    PointMixture { points: Vec<Vector>, weights: Vec<f64> },
}

impl InitialMeasure {
    pub fn dirac(x: Vector) -> Self {
        InitialMeasure::PointMixture {
            points: vec![x],
            weights: vec![1.0],
        }
    }

    pub fn point_mixture(points: Vec<Vector>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::InvalidArgument(
                "point mixture needs equally many points and weights".into(),
            ));
        }
        let n = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != n) {
            return Err(Error::DimensionMismatch {
                what: "mixture point",
                expected: n,
                got: p.len(),
            });
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("mixture weights must be positive and finite".into()));
        }
        Ok(InitialMeasure::PointMixture { points, weights })
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialMeasure::Gaussian(g) => g.dim(),
            InitialMeasure::PointMixture { points, .. } => points[0].len(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            InitialMeasure::Gaussian(_) => 1.0,
            InitialMeasure::PointMixture { weights, .. } => weights.iter().sum(),
        }
    }

    /// `int |x|^2 dmu`
    pub fn second_moment(&self) -> f64 {
        match self {
            InitialMeasure::Gaussian(g) => g.cov.trace() + g.mean.norm_squared(),
            InitialMeasure::PointMixture { points, weights } => points
                .iter()
                .zip(weights)
                .map(|(p, w)| w * p.norm_squared())
                .sum(),
        }
    }
}

/// A finite mixture of weighted Gaussians: the form every `mu(t)` takes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolvedMeasure {
    pub components: Vec<WeightedGaussian>,
}

impl EvolvedMeasure {
    pub fn total_mass(&self) -> f64 {
        self.components.iter().map(|c| c.mass).sum()
    }

    /// `int |y|^2 mu(dy)` for the (positive) mixture.
    pub fn second_moment(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.mass * (c.measure.cov.trace() + c.measure.mean.norm_squared()))
            .sum()
    }

    pub fn characteristic_functional(&self, y: &Vector) -> Complex64 {
        self.components
            .iter()
            .map(|c| c.measure.characteristic_functional(y) * c.mass)
            .sum()
    }
}

/// `mu(t) = int G_x(t) mu0(dx)`.
pub fn apply_to_initial(k: &GaussianKernel, mu0: &InitialMeasure) -> Result<EvolvedMeasure> {
    let n = k.dim();
    if mu0.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "initial measure",
            expected: n,
            got: mu0.dim(),
        });
    }
    match mu0 {
        InitialMeasure::PointMixture { points, weights } => Ok(EvolvedMeasure {
            components: points
                .iter()
                .zip(weights)
                .map(|(x, w)| WeightedGaussian {
                    mass: w * k.mass(x),
                    measure: k.transition(x),
                })
                .collect(),
        }),
        InitialMeasure::Gaussian(g) => {
            let ident = Matrix::identity(n, n);
            let sigma = g.cov.as_matrix();
            // A = I + S P; tilted law of x is N(A^{-1} m, A^{-1} S).
            let a = &ident + sigma * k.p.as_matrix();
            let lu = a.lu();
            let det = lu.determinant();
            if !(det > 0.0) {
                return Err(Error::NonGaussianComposition {
                    reason: format!("det(I + S P) = {det}"),
                });
            }
            let a_inv = lu.try_inverse().ok_or_else(|| Error::NonGaussianComposition {
                reason: "I + S P is singular".into(),
            })?;
            let tilted_mean = &a_inv * &g.mean;
            let tilted_cov = SymMatrix::symmetrize(&a_inv * sigma);
            let exponent = -0.5 * g.mean.dot(&(k.p.as_matrix() * &tilted_mean));
            let mass = k.s / det.sqrt() * exponent.exp();
            let cov = SymMatrix::symmetrize(
                k.q.as_matrix() + &k.r * tilted_cov.as_matrix() * k.r.transpose(),
            );
            cov.check_psd("evolved covariance", &Tolerances::default())
                .map_err(|e| Error::NonGaussianComposition {
                    reason: e.to_string(),
                })?;
            Ok(EvolvedMeasure {
                components: vec![WeightedGaussian {
                    mass,
                    measure: GaussianMeasure {
                        mean: &k.r * tilted_mean,
                        cov,
                    },
                }],
            })
        }
    }
}

/// JSON record `{s, P, Q, R, dim}` with row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub dim: usize,
    pub s: f64,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
}

pub(crate) fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>], n: usize, what: &'static str) -> Result<Matrix> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            what,
            expected: n,
            got: rows.len(),
        });
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl From<&GaussianKernel> for KernelRecord {
    fn from(k: &GaussianKernel) -> Self {
        KernelRecord {
            dim: k.dim(),
            s: k.s,
            p: rows(k.p.as_matrix()),
            q: rows(k.q.as_matrix()),
            r: rows(&k.r),
        }
    }
}

impl TryFrom<&KernelRecord> for GaussianKernel {
    type Error = Error;
    fn try_from(rec: &KernelRecord) -> Result<Self> {
        let n = rec.dim;
        let p = SymMatrix::new(from_rows(&rec.p, n, "P")?)?;
        let q = SymMatrix::new(from_rows(&rec.q, n, "Q")?)?;
        let r = from_rows(&rec.r, n, "R")?;
        GaussianKernel::new(rec.s, p, q, r)
    }
}

/// Smallest eigenvalue of a symmetric matrix; used by diagnostics.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}
