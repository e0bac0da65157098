//! Grid skeletons of the conditional Ornstein-Uhlenbeck-type path measure.
//!
//! A path starts at `x` and moves from `t_{i-1}` to `t_i` by the transition
//! law `Gamma(Q(dt), R(dt) y)` of the fundamental solution, picking up the
//! log-weight `log s(dt) - (P(dt) y, y)/2` of the point it leaves. For
//! `C = 0` the kernels are probability kernels and every weight is `0`.
//! Chaining Gaussian kernels is exact, so any event constraining only grid
//! times has the same probability as under the continuous-time measure.

use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{covariance_factor, GaussianMeasure};
use crate::mc::{self, mean_stderr, par_map};
use crate::operators::{Matrix, OperatorSet, SymMatrix, Vector};
use crate::riccati::{state_at, EvolutionState};

/// `0 = t_0 < t_1 < ... < t_m = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::InvalidArgument(
                "grid needs at least two times and must start at 0".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || !times.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidArgument("grid times must be finite and strictly increasing".into()));
        }
        Ok(Self { times })
    }

    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidArgument("uniform grid needs steps >= 1 and T > 0".into()));
        }
        let h = horizon / steps as f64;
        let mut times: Vec<f64> = (0..steps).map(|k| k as f64 * h).collect();
        times.push(horizon);
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Grid index of `t`, matched to within `1e-12 T`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * self.horizon();
        self.times.iter().position(|s| (s - t).abs() <= tol)
    }

    /// Inserts the midpoint of every interval.
    pub fn refine(&self) -> TimeGrid {
        let mut times = Vec::with_capacity(2 * self.times.len() - 1);
        for w in self.times.windows(2) {
            times.push(w[0]);
            times.push(0.5 * (w[0] + w[1]));
        }
        times.push(self.horizon());
        TimeGrid { times }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    /// One value per grid time; `values[0]` is the start point.
    pub values: Vec<Vector>,
    pub log_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub start: Vector,
    pub samples: Vec<PathSample>,
    pub seed: u64,
    pub ops: OperatorSet,
}

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn values_at(&self, index: usize) -> Vec<Vector> {
        self.samples.iter().map(|s| s.values[index].clone()).collect()
    }

    /// CSV with `#`-prefixed header lines (dimension, seed, grid) followed by
    /// one row per sample: `sample, log_weight, v_<step>_<coord>...`.
    pub fn to_csv(&self) -> String {
        let n = self.start.len();
        let mut out = format!("# dim={}\n# seed={}\n# samples={}\n", n, self.seed, self.len());
        let grid: Vec<String> = self.grid.times().iter().map(|t| format!("{t:e}")).collect();
        out.push_str(&format!("# grid={}\n", grid.join(" ")));
        out.push_str("sample,log_weight");
        for k in 0..self.grid.times().len() {
            for i in 0..n {
                out.push_str(&format!(",v_{k}_{i}"));
            }
        }
        out.push('\n');
        for (j, s) in self.samples.iter().enumerate() {
            out.push_str(&format!("{j},{:e}", s.log_weight));
            for v in &s.values {
                for x in v.iter() {
                    out.push_str(&format!(",{x:e}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

struct StepKernel {
    dt: f64,
    r: Matrix,
    factor: Matrix,
    log_s: f64,
    p: SymMatrix,
    weighted: bool,
}

impl StepKernel {
    fn new(ops: &OperatorSet, dt: f64) -> Result<Self> {
        let st = state_at(ops, dt)?;
        Self::from_state(&st, dt)
    }

    fn from_state(st: &EvolutionState, dt: f64) -> Result<Self> {
        let chol = covariance_factor(&st.q).map_err(|_| Error::DegenerateStep { dt })?;
        Ok(Self {
            dt,
            r: st.r.clone(),
            factor: chol.l(),
            log_s: st.s.ln(),
            weighted: !st.p.is_zero() || st.s != 1.0,
            p: st.p.clone(),
        })
    }
}

fn step_index(kernels: &[StepKernel], dt: f64) -> Option<usize> {
    kernels
        .iter()
        .position(|k| (k.dt - dt).abs() <= 1e-12 * dt.max(k.dt))
}

/// Transition kernels for every step of a grid, computed once per distinct
/// step length.
pub struct PathSampler {
    ops: OperatorSet,
    grid: TimeGrid,
    kernels: Vec<StepKernel>,
    step_kernel: Vec<usize>,
}

impl PathSampler {
    pub fn new(ops: &OperatorSet, grid: &TimeGrid) -> Result<Self> {
        if ops.alpha != 0.0 {
            return Err(Error::AlphaNonzero { alpha: ops.alpha });
        }
        let mut kernels: Vec<StepKernel> = Vec::new();
        let mut step_kernel = Vec::with_capacity(grid.steps());
        for w in grid.times().windows(2) {
            let dt = w[1] - w[0];
            let idx = match step_index(&kernels, dt) {
                Some(i) => i,
                None => {
                    kernels.push(StepKernel::new(ops, dt)?);
                    kernels.len() - 1
                }
            };
            step_kernel.push(idx);
        }
        Ok(Self {
            ops: ops.clone(),
            grid: grid.clone(),
            kernels,
            step_kernel,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn ops(&self) -> &OperatorSet {
        &self.ops
    }

    /// Walks one path from `x`, calling `visit(k, y_k)` after each step
    /// `k = 1..=m`. Returns the accumulated log-weight.
    pub fn walk<F>(&self, x: &Vector, rng: &mut ChaCha8Rng, mut visit: F) -> f64
    where
        F: FnMut(usize, &Vector),
    {
        let n = x.len();
        let mut y = x.clone();
        let mut next = Vector::zeros(n);
        let mut z = Vector::zeros(n);
        let mut log_weight = 0.0;
        for (k, &ki) in self.step_kernel.iter().enumerate() {
            let ker = &self.kernels[ki];
            if ker.weighted {
                log_weight += ker.log_s - 0.5 * ker.p.quad(&y);
            }
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            next.gemv(1.0, &ker.r, &y, 0.0);
            next.gemv(1.0, &ker.factor, &z, 1.0);
            std::mem::swap(&mut y, &mut next);
            visit(k + 1, &y);
        }
        log_weight
    }

    pub fn sample_one(&self, x: &Vector, seed: u64, index: u64) -> PathSample {
        let mut rng = mc::stream(seed, index);
        let mut values = Vec::with_capacity(self.grid.times().len());
        values.push(x.clone());
        let log_weight = self.walk(x, &mut rng, |_, y| values.push(y.clone()));
        PathSample { values, log_weight }
    }

    pub fn sample(&self, x: &Vector, n: usize, seed: u64, threads: Option<usize>) -> Result<PathEnsemble> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        if x.len() != self.ops.dim() {
            return Err(Error::DimensionMismatch {
                what: "start point",
                expected: self.ops.dim(),
                got: x.len(),
            });
        }
        let samples = par_map(n, threads, |i| self.sample_one(x, seed, i as u64))?;
        Ok(PathEnsemble {
            grid: self.grid.clone(),
            start: x.clone(),
            samples,
            seed,
            ops: self.ops.clone(),
        })
    }
}

pub fn sample_paths(
    ops: &OperatorSet,
    x: &Vector,
    grid: &TimeGrid,
    n: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    sample_paths_with(ops, x, grid, n, seed, None)
}

pub fn sample_paths_with(
    ops: &OperatorSet,
    x: &Vector,
    grid: &TimeGrid,
    n: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<PathEnsemble> {
    PathSampler::new(ops, grid)?.sample(x, n, seed, threads)
}

// ---------------------------------------------------------------------------
// Cylinder sets.

mod bounds {
    //! Box bounds in JSON: `null` stands for an infinite bound.
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    fn ser<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    fn de<'de, D: Deserializer<'de>>(d: D, fill: f64) -> Result<Vec<f64>, D::Error> {
        let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(fill)).collect())
    }

    pub mod lower {
        use super::*;
        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            ser(v, s)
        }
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            de(d, f64::NEG_INFINITY)
        }
    }

    pub mod upper {
        use super::*;
        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            ser(v, s)
        }
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            de(d, f64::INFINITY)
        }
    }
}

/// A Borel set from the supported families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Whole,
    /// Closed axis-aligned box; infinite bounds allowed.
    Box {
        #[serde(with = "bounds::lower")]
        lower: Vec<f64>,
        #[serde(with = "bounds::upper")]
        upper: Vec<f64>,
    },
    /// Closed ball.
    Ball { center: Vec<f64>, radius: f64 },
    /// `{y : (normal, y) >= offset}`
    HalfSpace { normal: Vec<f64>, offset: f64 },
}

impl Region {
    pub fn contains(&self, y: &Vector) -> bool {
        match self {
            Region::Whole => true,
            Region::Box { lower, upper } => y
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi),
            Region::Ball { center, radius } => {
                let d2: f64 = y.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 <= radius * radius
            }
            Region::HalfSpace { normal, offset } => {
                y.iter().zip(normal).map(|(a, b)| a * b).sum::<f64>() >= *offset
            }
        }
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        let lens: Vec<usize> = match self {
            Region::Whole => vec![],
            Region::Box { lower, upper } => vec![lower.len(), upper.len()],
            Region::Ball { center, .. } => vec![center.len()],
            Region::HalfSpace { normal, .. } => vec![normal.len()],
        };
        match lens.into_iter().find(|l| *l != n) {
            Some(got) => Err(Error::DimensionMismatch {
                what: "region",
                expected: n,
                got,
            }),
            None => Ok(()),
        }
    }

    /// `A ⊂ A'` for boxes, used by monotonicity checks.
    pub fn box_contains(&self, other: &Region) -> bool {
        match (self, other) {
            (Region::Whole, _) => true,
            (Region::Box { lower, upper }, Region::Box { lower: l2, upper: u2 }) => lower
                .iter()
                .zip(upper)
                .zip(l2.iter().zip(u2))
                .all(|((lo, hi), (lo2, hi2))| lo <= lo2 && hi >= hi2),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub time: f64,
    pub region: Region,
}

/// `{f : f(t_i) in A_i, f(T) in A}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderSpec {
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    #[serde(default = "whole")]
    pub terminal: Region,
}

fn whole() -> Region {
    Region::Whole
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderEstimate {
    pub estimate: f64,
    pub stderr: f64,
    /// Number of samples inside the cylinder.
    pub n_effective: usize,
}

impl CylinderSpec {
    fn resolve(&self, grid: &TimeGrid, n: usize) -> Result<Vec<(usize, &Region)>> {
        self.terminal.check_dim(n)?;
        let mut out = Vec::with_capacity(self.constraints.len() + 1);
        for c in &self.constraints {
            c.region.check_dim(n)?;
            let idx = grid.index_of(c.time).ok_or_else(|| {
                Error::InvalidArgument(format!("constraint time {} is not on the grid", c.time))
            })?;
            if idx == 0 || idx == grid.steps() {
                return Err(Error::InvalidArgument(format!(
                    "constraint time {} must lie strictly inside (0, T)",
                    c.time
                )));
            }
            out.push((idx, &c.region));
        }
        out.push((grid.steps(), &self.terminal));
        Ok(out)
    }
}

/// Monte Carlo estimate of the path measure of a cylinder set.
pub fn cylinder_mass(ensemble: &PathEnsemble, spec: &CylinderSpec) -> Result<CylinderEstimate> {
    let checks = spec.resolve(&ensemble.grid, ensemble.start.len())?;
    let mut accepted = 0usize;
    let terms: Vec<f64> = ensemble
        .samples
        .iter()
        .map(|s| {
            if checks.iter().all(|(i, region)| region.contains(&s.values[*i])) {
                accepted += 1;
                s.log_weight.exp()
            } else {
                0.0
            }
        })
        .collect();
    if accepted == 0 {
        return Err(Error::EmptyAcceptance);
    }
    let (estimate, stderr) = mean_stderr(&terms);
    Ok(CylinderEstimate {
        estimate,
        stderr: if stderr.is_nan() { 0.0 } else { stderr },
        n_effective: accepted,
    })
}

// ---------------------------------------------------------------------------
// Endpoint conditioning.

#[derive(Debug, Clone, PartialEq)]
pub enum Terminal {
    Point(Vector),
    Gaussian(GaussianMeasure),
    /// Rejection sampling on `f(T) in A`.
    Set(Region),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedEnsemble {
    pub ensemble: PathEnsemble,
    /// Fraction of proposals accepted (`1` for exact bridges).
    pub acceptance_rate: f64,
}

/// Per-step bridge coefficients: `y_i | y_{i-1}, y_T ~
/// N(mean_prev y_{i-1} + gain y_T, cov)`.
struct BridgeStep {
    mean_prev: Matrix,
    gain: Matrix,
    factor: Matrix,
}

fn psd_factor(m: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&d)
}

fn bridge_steps(ops: &OperatorSet, grid: &TimeGrid) -> Result<Vec<BridgeStep>> {
    let times = grid.times();
    let horizon = grid.horizon();
    let mut steps = Vec::with_capacity(grid.steps() - 1);
    for i in 1..grid.steps() {
        let step = state_at(ops, times[i] - times[i - 1])?;
        let rest = state_at(ops, horizon - times[i])?;
        // joint of (y_i, y_T) given y_{i-1}: y_i ~ N(R1 y, Q1), y_T | y_i ~ N(R2 y_i, Q2)
        let (r1, q1) = (&step.r, step.q.as_matrix());
        let (r2, q2) = (&rest.r, rest.q.as_matrix());
        let s = r2 * q1 * r2.transpose() + q2;
        let s_inv = s
            .clone()
            .try_inverse()
            .ok_or(Error::DegenerateStep { dt: horizon - times[i] })?;
        let gain = q1 * r2.transpose() * s_inv;
        let cov = q1 - &gain * r2 * q1;
        let mean_prev = (Matrix::identity(r1.nrows(), r1.nrows()) - &gain * r2) * r1;
        steps.push(BridgeStep {
            mean_prev,
            gain,
            factor: psd_factor(&cov),
        });
    }
    Ok(steps)
}

fn draw_normal(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Paths pinned at `f(0) = x` and conditioned on the terminal value.
///
/// Point and Gaussian terminals use the exact Gaussian bridge (requires
/// `C = 0`); a set terminal uses rejection from the unconditioned sampler.
pub fn condition_endpoint(
    ops: &OperatorSet,
    x: &Vector,
    grid: &TimeGrid,
    n: usize,
    seed: u64,
    terminal: &Terminal,
    threads: Option<usize>,
) -> Result<ConditionedEnsemble> {
    if ops.alpha != 0.0 {
        return Err(Error::AlphaNonzero { alpha: ops.alpha });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let dim = ops.dim();
    match terminal {
        Terminal::Set(region) => {
            region.check_dim(dim)?;
            let sampler = PathSampler::new(ops, grid)?;
            let batch = n.max(1000);
            let mut samples = Vec::with_capacity(n);
            let mut attempted = 0usize;
            while samples.len() < n {
                let start = attempted as u64;
                let drawn = par_map(batch, threads, |i| sampler.sample_one(x, seed, start + i as u64))?;
                attempted += batch;
                samples.extend(
                    drawn
                        .into_iter()
                        .filter(|s| region.contains(s.values.last().unwrap())),
                );
                let rate = samples.len() as f64 / attempted as f64;
                if attempted >= 100_000 && rate < 1e-4 {
                    return Err(Error::LowAcceptance { rate });
                }
            }
            let accepted = samples.len();
            samples.truncate(n);
            Ok(ConditionedEnsemble {
                acceptance_rate: accepted as f64 / attempted as f64,
                ensemble: PathEnsemble {
                    grid: grid.clone(),
                    start: x.clone(),
                    samples,
                    seed,
                    ops: ops.clone(),
                },
            })
        }
        Terminal::Point(_) | Terminal::Gaussian(_) => {
            if !ops.c.is_zero() {
                return Err(Error::BridgeUnavailable);
            }
            let (end_mean, end_factor) = match terminal {
                Terminal::Point(p) => (p.clone(), Matrix::zeros(dim, dim)),
                Terminal::Gaussian(g) => (g.mean.clone(), psd_factor(g.cov.as_matrix())),
                Terminal::Set(_) => unreachable!(),
            };
            if end_mean.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "terminal",
                    expected: dim,
                    got: end_mean.len(),
                });
            }
            let steps = bridge_steps(ops, grid)?;
            let samples = par_map(n, threads, |j| {
                let mut rng = mc::stream(seed, j as u64);
                let end = &end_mean + &end_factor * draw_normal(&mut rng, dim);
                let mut values = Vec::with_capacity(grid.times().len());
                values.push(x.clone());
                for st in &steps {
                    let prev = values.last().unwrap();
                    let y = &st.mean_prev * prev + &st.gain * &end + &st.factor * draw_normal(&mut rng, dim);
                    values.push(y);
                }
                values.push(end);
                PathSample {
                    values,
                    log_weight: 0.0,
                }
            })?;
            Ok(ConditionedEnsemble {
                acceptance_rate: 1.0,
                ensemble: PathEnsemble {
                    grid: grid.clone(),
                    start: x.clone(),
                    samples,
                    seed,
                    ops: ops.clone(),
                },
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Gaussianity.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFunctional {
    pub time: f64,
    pub direction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalCheck {
    pub label: String,
    pub mean: f64,
    pub std: f64,
    /// Largest `|phi_emp(w) - phi_gauss(w)|` over the probe frequencies.
    pub max_deviation: f64,
    /// Deviation in units of its Monte Carlo standard error.
    pub max_sigma: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianityReport {
    pub checks: Vec<FunctionalCheck>,
    pub samples: usize,
    pub insufficient_samples: bool,
    /// Set when the ensemble carries nonzero weights (`C != 0`); such
    /// ensembles are not tested.
    pub weighted: bool,
    pub passed: bool,
}

/// Minimum ensemble size for the characteristic-function comparison.
pub const MIN_GAUSSIANITY_SAMPLES: usize = 30;
const PROBE_SCALES: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

fn check_values(label: String, z: &[f64]) -> FunctionalCheck {
    let (mean, _) = mean_stderr(z);
    let var = mc::pairwise_sum(&z.iter().map(|v| (v - mean) * (v - mean)).collect::<Vec<_>>())
        / (z.len() - 1) as f64;
    let std = var.sqrt();
    let n = z.len() as f64;
    let mut max_dev = 0.0_f64;
    let mut max_sigma = 0.0_f64;
    if std > 0.0 {
        for k in PROBE_SCALES {
            let w = k / std;
            let emp: Complex64 = z
                .iter()
                .map(|v| Complex64::new(0.0, w * v).exp())
                .sum::<Complex64>()
                / n;
            let model = Complex64::new(-0.5 * var * w * w, w * mean).exp();
            let dev = (emp - model).norm();
            let se = ((1.0 - model.norm_sqr()).max(0.0) / n).sqrt().max(1e-300);
            max_dev = max_dev.max(dev);
            max_sigma = max_sigma.max(dev / se);
        }
    }
    FunctionalCheck {
        label,
        mean,
        std,
        max_deviation: max_dev,
        max_sigma,
        passed: max_sigma <= 3.0,
    }
}

/// Compares the empirical characteristic function of each linear functional
/// `(f(t), v)` with its Gaussian fit, and of the sums and differences of
/// each standardized pair (joint Gaussianity). A probe fails beyond 3
/// standard errors.
pub fn gaussianity_check(ensemble: &PathEnsemble, functionals: &[LinearFunctional]) -> Result<GaussianityReport> {
    let n = ensemble.len();
    let weighted = ensemble.samples.iter().any(|s| s.log_weight != 0.0);
    if n < MIN_GAUSSIANITY_SAMPLES || weighted {
        return Ok(GaussianityReport {
            checks: vec![],
            samples: n,
            insufficient_samples: n < MIN_GAUSSIANITY_SAMPLES,
            weighted,
            passed: false,
        });
    }
    let dim = ensemble.start.len();
    let mut series: Vec<(String, Vec<f64>)> = Vec::with_capacity(functionals.len());
    for f in functionals {
        if f.direction.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "functional direction",
                expected: dim,
                got: f.direction.len(),
            });
        }
        let idx = ensemble
            .grid
            .index_of(f.time)
            .ok_or_else(|| Error::InvalidArgument(format!("time {} is not on the grid", f.time)))?;
        let dir = Vector::from_column_slice(&f.direction);
        let z: Vec<f64> = ensemble.samples.iter().map(|s| s.values[idx].dot(&dir)).collect();
        series.push((format!("t={} v={:?}", f.time, f.direction), z));
    }
    let mut checks: Vec<FunctionalCheck> = series
        .iter()
        .map(|(label, z)| check_values(label.clone(), z))
        .collect();
    for a in 0..series.len() {
        for b in (a + 1)..series.len() {
            let (sa, sb) = (checks[a].std, checks[b].std);
            if sa == 0.0 || sb == 0.0 {
                continue;
            }
            for (sign, op) in [(1.0, '+'), (-1.0, '-')] {
                let z: Vec<f64> = series[a]
                    .1
                    .iter()
                    .zip(&series[b].1)
                    .map(|(u, v)| u / sa + sign * v / sb)
                    .collect();
                checks.push(check_values(format!("[{a}]{op}[{b}]"), &z));
            }
        }
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(GaussianityReport {
        checks,
        samples: n,
        insufficient_samples: false,
        weighted: false,
        passed,
    })
}
