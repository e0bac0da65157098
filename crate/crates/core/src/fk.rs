//! Feynman-Kac path integrals over the `C = 0` path measure.
//!
//! The kernel of the equation with potential `V` is estimated as
//! `[G^V_x(t)](A) = E[exp{int_0^t V(s, q(s)) ds} 1{q(t) in A}]` over paths
//! `q` from [`PathSampler`], with the time integral taken by the trapezoid
//! rule on the path grid. The estimator is unbiased for that discretized
//! functional.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::InitialMeasure;
use crate::mc::{self, mean_stderr, par_map};
use crate::operators::{OperatorSet, SymMatrix, Tolerances, Vector};
use crate::paths::{PathSample, PathSampler, Region, TimeGrid};

pub type PotentialFn = Arc<dyn Fn(f64, &Vector) -> Complex64 + Send + Sync>;

#[derive(Clone)]
pub enum PotentialKind {
    /// `V(t, x) = -(C_v x, x)/2 + offset`
    Quadratic { cv: SymMatrix, offset: f64 },
    /// `V(t, x) = amplitude cos((k, x))`
    BoundedCosine { amplitude: f64, wave: Vector },
    /// Host-supplied function.
    Tabulated(PotentialFn),
}

impl fmt::Debug for PotentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialKind::Quadratic { cv, offset } => f
                .debug_struct("Quadratic")
                .field("cv", cv)
                .field("offset", offset)
                .finish(),
            PotentialKind::BoundedCosine { amplitude, wave } => f
                .debug_struct("BoundedCosine")
                .field("amplitude", amplitude)
                .field("wave", wave)
                .finish(),
            PotentialKind::Tabulated(_) => f.write_str("Tabulated(..)"),
        }
    }
}

/// Declared growth envelope: `|V(t,x)| <= c1 exp(o(|x|))` and
/// `Re V(t,x) <= c2 o(|x|^r)`, with constant `c1`, `c2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub c1: f64,
    pub c2: f64,
    pub r: f64,
}

#[derive(Debug, Clone)]
pub struct Potential {
    pub kind: PotentialKind,
    pub growth: Growth,
}

impl Potential {
    pub fn new(kind: PotentialKind, growth: Growth) -> Result<Self> {
        if !(0.0..=2.0).contains(&growth.r) {
            return Err(Error::InvalidArgument(format!("growth exponent r = {} outside [0, 2]", growth.r)));
        }
        if let PotentialKind::Quadratic { cv, .. } = &kind {
            if growth.r < 2.0 && cv.check_psd("C_v", &Tolerances::default()).is_err() {
                return Err(Error::InvalidArgument(
                    "a quadratic potential with indefinite C_v needs r = 2".into(),
                ));
            }
        }
        Ok(Self { kind, growth })
    }

    pub fn quadratic(cv: SymMatrix, offset: f64) -> Result<Self> {
        let c1 = offset.abs() + cv.spectral_norm();
        let c2 = offset.max(0.0);
        Self::new(PotentialKind::Quadratic { cv, offset }, Growth { c1, c2, r: 2.0 })
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self::quadratic(SymMatrix::zeros(n), value).expect("constant potential is valid")
    }

    pub fn bounded_cosine(amplitude: f64, wave: Vector) -> Self {
        let a = amplitude.abs();
        Self {
            kind: PotentialKind::BoundedCosine { amplitude, wave },
            growth: Growth { c1: a, c2: a, r: 0.0 },
        }
    }

    pub fn tabulated(f: PotentialFn, growth: Growth) -> Result<Self> {
        Self::new(PotentialKind::Tabulated(f), growth)
    }

    pub fn eval(&self, t: f64, x: &Vector) -> Complex64 {
        match &self.kind {
            PotentialKind::Quadratic { cv, offset } => Complex64::new(offset - 0.5 * cv.quad(x), 0.0),
            PotentialKind::BoundedCosine { amplitude, wave } => {
                Complex64::new(amplitude * wave.dot(x).cos(), 0.0)
            }
            PotentialKind::Tabulated(f) => f(t, x),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match &self.kind {
            PotentialKind::Quadratic { cv, .. } => Some(cv.dim()),
            PotentialKind::BoundedCosine { wave, .. } => Some(wave.len()),
            PotentialKind::Tabulated(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeViolation {
    pub t: f64,
    pub norm_x: f64,
    pub value: [f64; 2],
    pub bound: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialReport {
    pub probes: usize,
    pub violations: usize,
    pub first_violation: Option<ProbeViolation>,
    pub refuted: bool,
    pub note: String,
}

/// Largest probe radius used by [`validate_potential`].
pub const PROBE_RADIUS: f64 = 10.0;

/// Probes the declared growth envelope at random `(t, x)`, `t in [0, 1]`,
/// `|x| <= 10`, using the finite surrogates `|V| <= c1 e^{|x|}` and
/// `Re V <= c2 max(1, |x|^r)`. Probing can refute the hypotheses but
/// never establish them.
pub fn validate_potential(v: &Potential, dim: usize, probes: usize, seed: u64) -> PotentialReport {
    let mut rng = mc::stream(seed, 0);
    let g = v.growth;
    let mut violations = 0;
    let mut first = None;
    for _ in 0..probes {
        let t: f64 = rng.random_range(0.0..=1.0);
        let dir = Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let radius: f64 = rng.random_range(0.0..=PROBE_RADIUS);
        let norm = dir.norm();
        let x = if norm > 0.0 { dir * (radius / norm) } else { dir };
        let nx = x.norm();
        let val = v.eval(t, &x);
        let abs_ok = val.norm() <= g.c1 * nx.exp() * (1.0 + 1e-12);
        let re_ok = val.re <= g.c2 * nx.powf(g.r).max(1.0) * (1.0 + 1e-12) + 1e-300;
        let finite = val.re.is_finite() && val.im.is_finite();
        if !(abs_ok && re_ok && finite) {
            violations += 1;
            if first.is_none() {
                let bound = if !finite {
                    "non-finite value"
                } else if !abs_ok {
                    "|V| <= c1 exp(|x|)"
                } else {
                    "Re V <= c2 max(1, |x|^r)"
                };
                first = Some(ProbeViolation {
                    t,
                    norm_x: nx,
                    value: [val.re, val.im],
                    bound: bound.into(),
                });
            }
        }
    }
    PotentialReport {
        probes,
        violations,
        first_violation: first,
        refuted: violations > 0,
        note: "finite probes can refute the growth hypotheses but cannot confirm them".into(),
    }
}

/// Trapezoidal `int_0^T V(s, q(s)) ds` along grid values.
pub fn log_path_integral(values: &[Vector], v: &Potential, grid: &TimeGrid) -> Complex64 {
    let times = grid.times();
    let mut acc = Complex64::new(0.0, 0.0);
    let mut prev = v.eval(times[0], &values[0]);
    for k in 1..times.len() {
        let cur = v.eval(times[k], &values[k]);
        acc += (prev + cur) * (0.5 * (times[k] - times[k - 1]));
        prev = cur;
    }
    acc
}

/// Threshold on the real part of the log-weight.
pub const MAX_LOG_WEIGHT: f64 = 700.0;

/// `exp{int_0^T V(s, q(s)) ds}`, kept in log space until the final
/// exponentiation.
pub fn path_integral_weight(path: &PathSample, v: &Potential, grid: &TimeGrid) -> Result<Complex64> {
    if path.values.len() != grid.times().len() {
        return Err(Error::DimensionMismatch {
            what: "path length",
            expected: grid.times().len(),
            got: path.values.len(),
        });
    }
    let log = log_path_integral(&path.values, v, grid);
    if log.re > MAX_LOG_WEIGHT {
        return Err(Error::WeightOverflow { log_weight: log.re });
    }
    Ok(log.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FkOptions {
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    /// Use the weighted `C != 0` base measure. No accuracy guarantees.
    #[serde(default)]
    pub experimental_weighted_base: bool,
}

/// `{estimate, stderr, N, grid, seed, overflow_fraction}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FkEstimate {
    pub estimate: f64,
    pub estimate_im: f64,
    pub stderr: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub grid_steps: usize,
    pub horizon: f64,
    pub seed: u64,
    /// Fraction of paths whose log-weight exceeded 700; they are left out of
    /// the estimate.
    pub overflow_fraction: f64,
}

impl FkEstimate {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.estimate, self.estimate_im)
    }
}

/// Bounded continuous test functions for [`fk_evolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    One,
    Indicator { region: Region },
    /// `cos((y, .))`
    FourierRe { y: Vec<f64> },
    /// `sin((y, .))`
    FourierIm { y: Vec<f64> },
}

impl TestFunction {
    pub fn eval(&self, z: &Vector) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::Indicator { region } => {
                if region.contains(z) {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::FourierRe { y } => z.iter().zip(y).map(|(a, b)| a * b).sum::<f64>().cos(),
            TestFunction::FourierIm { y } => z.iter().zip(y).map(|(a, b)| a * b).sum::<f64>().sin(),
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        let len = match self {
            TestFunction::One => n,
            TestFunction::Indicator { region } => return region.check_dim(n),
            TestFunction::FourierRe { y } | TestFunction::FourierIm { y } => y.len(),
        };
        if len != n {
            return Err(Error::DimensionMismatch {
                what: "test function",
                expected: n,
                got: len,
            });
        }
        Ok(())
    }
}

struct PathOutcome {
    log_weight: Complex64,
    end: Vector,
}

fn prepare(ops: &OperatorSet, v: &Potential, t: f64, grid: &TimeGrid, opts: &FkOptions) -> Result<PathSampler> {
    if opts.samples < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 samples, got {}", opts.samples)));
    }
    if (grid.horizon() - t).abs() > 1e-12 * t.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "grid horizon {} differs from t = {t}",
            grid.horizon()
        )));
    }
    if let Some(d) = v.dim() {
        if d != ops.dim() {
            return Err(Error::DimensionMismatch {
                what: "potential",
                expected: ops.dim(),
                got: d,
            });
        }
    }
    if !ops.c.is_zero() && !opts.experimental_weighted_base {
        return Err(Error::CNotZero);
    }
    PathSampler::new(ops, grid)
}

fn run_path(
    sampler: &PathSampler,
    v: &Potential,
    x: &Vector,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> PathOutcome {
    let times = sampler.grid().times();
    let mut prev = v.eval(times[0], x);
    let mut integral = Complex64::new(0.0, 0.0);
    let mut end = x.clone();
    let base = sampler.walk(x, rng, |k, y| {
        let cur = v.eval(times[k], y);
        integral += (prev + cur) * (0.5 * (times[k] - times[k - 1]));
        prev = cur;
        if k == times.len() - 1 {
            end.copy_from(y);
        }
    });
    PathOutcome {
        log_weight: integral + base,
        end,
    }
}

fn summarize(values: &[Option<Complex64>], grid: &TimeGrid, seed: u64) -> FkEstimate {
    let kept: Vec<Complex64> = values.iter().flatten().copied().collect();
    let re: Vec<f64> = kept.iter().map(|z| z.re).collect();
    let im: Vec<f64> = kept.iter().map(|z| z.im).collect();
    let (m_re, se_re) = mean_stderr(&re);
    let (m_im, se_im) = mean_stderr(&im);
    FkEstimate {
        estimate: m_re,
        estimate_im: m_im,
        stderr: (se_re * se_re + se_im * se_im).sqrt(),
        n: values.len(),
        grid_steps: grid.steps(),
        horizon: grid.horizon(),
        seed,
        overflow_fraction: (values.len() - kept.len()) as f64 / values.len() as f64,
    }
}

/// Monte Carlo estimate of `[G^V_x(t)](A)`.
pub fn fk_kernel_mass(
    ops: &OperatorSet,
    v: &Potential,
    x: &Vector,
    t: f64,
    terminal: &Region,
    grid: &TimeGrid,
    opts: &FkOptions,
) -> Result<FkEstimate> {
    let sampler = prepare(ops, v, t, grid, opts)?;
    if x.len() != ops.dim() {
        return Err(Error::DimensionMismatch {
            what: "start point",
            expected: ops.dim(),
            got: x.len(),
        });
    }
    terminal.check_dim(ops.dim())?;
    let outcomes = par_map(opts.samples, opts.threads, |i| {
        let mut rng = mc::stream(opts.seed, i as u64);
        let out = run_path(&sampler, v, x, &mut rng);
        let inside = terminal.contains(&out.end);
        if out.log_weight.re > MAX_LOG_WEIGHT {
            (None, inside)
        } else if inside {
            (Some(out.log_weight.exp()), true)
        } else {
            (Some(Complex64::new(0.0, 0.0)), false)
        }
    })?;
    if !outcomes.iter().any(|(_, inside)| *inside) {
        return Err(Error::EmptyAcceptance);
    }
    let values: Vec<Option<Complex64>> = outcomes.into_iter().map(|(v, _)| v).collect();
    Ok(summarize(&values, grid, opts.seed))
}

/// Largest initial covariance eigenvalue accepted when `r = 2`; the moment
/// `int exp(|x|^2) dnu0` is finite only below 1/2.
pub const MAX_COVARIANCE_FOR_R2: f64 = 0.45;

/// Estimates `int f d nu(t)` for each test function, where
/// `nu(t) = int G^V_x(t) nu0(dx)`. Sample `i` first draws its start point
/// from `nu0` and then a path, both from stream `(seed, i)`.
pub fn fk_evolve(
    ops: &OperatorSet,
    v: &Potential,
    nu0: &InitialMeasure,
    t: f64,
    tests: &[TestFunction],
    grid: &TimeGrid,
    opts: &FkOptions,
) -> Result<Vec<FkEstimate>> {
    let sampler = prepare(ops, v, t, grid, opts)?;
    let n = ops.dim();
    if nu0.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "initial measure",
            expected: n,
            got: nu0.dim(),
        });
    }
    for f in tests {
        f.check_dim(n)?;
    }
    let mut factor = None;
    if let InitialMeasure::Gaussian(g) = nu0 {
        let top = g.cov.spectral_norm();
        if v.growth.r >= 2.0 && top >= MAX_COVARIANCE_FOR_R2 {
            return Err(Error::MomentConditionViolated {
                reason: format!(
                    "largest covariance eigenvalue {top} >= {MAX_COVARIANCE_FOR_R2} with r = 2"
                ),
            });
        }
        factor = Some(g.cov.psd_sqrt());
    }
    let total_mass = nu0.total_mass();
    let outcomes = par_map(opts.samples, opts.threads, |i| {
        let mut rng = mc::stream(opts.seed, i as u64);
        let start = match nu0 {
            InitialMeasure::Gaussian(g) => {
                let z = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                &g.mean + factor.as_ref().unwrap() * z
            }
            InitialMeasure::PointMixture { points, weights } => {
                if points.len() == 1 {
                    points[0].clone()
                } else {
                    let u: f64 = rng.random_range(0.0..total_mass);
                    let mut acc = 0.0;
                    let mut pick = points.len() - 1;
                    for (j, w) in weights.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            pick = j;
                            break;
                        }
                    }
                    points[pick].clone()
                }
            }
        };
        let out = run_path(&sampler, v, &start, &mut rng);
        if out.log_weight.re > MAX_LOG_WEIGHT {
            None
        } else {
            let w = out.log_weight.exp() * total_mass;
            Some(tests.iter().map(|f| w * f.eval(&out.end)).collect::<Vec<_>>())
        }
    })?;
    Ok((0..tests.len())
        .map(|j| {
            let col: Vec<Option<Complex64>> = outcomes
                .iter()
                .map(|o| o.as_ref().map(|vals| vals[j]))
                .collect();
            summarize(&col, grid, opts.seed)
        })
        .collect())
}
