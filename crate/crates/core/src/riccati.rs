//! The parameter flow of the fundamental solution.
//!
//! A kernel `G_x(t) = s(t) exp{-(P(t)x, x)/2} Gamma(Q(t), R(t)x)` solves the
//! equation with generators `(B, C, D, alpha)` iff
//!
//! ```text
//! s' = -s tr(C Q)/2 + alpha s      s(0) = 1
//! P' = R^T C R                     P(0) = 0
//! Q' = B - Q C Q + D^T Q + Q D     Q(0) = 0
//! R' = -Q C R + D^T R              R(0) = I
//! ```
//!
//! # Fourier form
//!
//! Under `mu^(y) = int e^{i(x,y)} mu(dx)` the terms of the equation become
//!
//! ```text
//! tr(B mu'')/2                 ->  -(B y, y) mu^ / 2
//! -[(D mu', .) + tr D mu]      ->  +(grad mu^, D y)
//! -(C x, x) mu / 2             ->  +tr(C Hess mu^) / 2
//! alpha mu                     ->  alpha mu^
//! ```
//!
//! so `d/dt G^ = -(By,y)G^/2 + (grad G^, Dy) + tr(C Hess G^)/2 + alpha G^`.
//! For the kernel, `grad_y G^ = g G^` and `Hess_y G^ = (g g^T - Q) G^` with
//! `g = i R x - Q y`. [`pde_residual_fourier`] evaluates the difference of
//! the two sides.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, apply_to_initial, GaussianKernel, InitialMeasure};
use crate::operators::{
    check_nonnegative_spectrum, conjugated_integral, cosh_sinhc_pair, log_det_cosh,
    matrix_exponential, max_abs, rel_err, validate_operator_set, Matrix, OperatorSet, SymMatrix,
    Tolerances, Vector,
};

/// `(t, s, P, Q, R)` at one instant of the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionState {
    pub t: f64,
    pub s: f64,
    pub p: SymMatrix,
    pub q: SymMatrix,
    pub r: Matrix,
}

impl EvolutionState {
    pub fn initial(n: usize) -> Self {
        Self {
            t: 0.0,
            s: 1.0,
            p: SymMatrix::zeros(n),
            q: SymMatrix::zeros(n),
            r: Matrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    pub fn kernel(&self) -> GaussianKernel {
        GaussianKernel {
            s: self.s,
            p: self.p.clone(),
            q: self.q.clone(),
            r: self.r.clone(),
        }
    }

    /// Largest relative parameter deviation from `other`
    /// (`s`, `P`, `Q`, `R` each measured by [`rel_err`]).
    pub fn rel_diff(&self, other: &EvolutionState) -> f64 {
        let ds = (self.s - other.s).abs() / other.s.abs();
        ds.max(rel_err(self.p.as_matrix(), other.p.as_matrix()))
            .max(rel_err(self.q.as_matrix(), other.q.as_matrix()))
            .max(rel_err(&self.r, &other.r))
    }
}

/// Time derivatives `(s', P', Q', R')`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    pub ds: f64,
    pub dp: SymMatrix,
    pub dq: SymMatrix,
    pub dr: Matrix,
}

pub fn rhs(state: &EvolutionState, ops: &OperatorSet) -> Rates {
    let (dlog_s, dp, dq, dr) = rhs_parts(state.q.as_matrix(), &state.r, ops);
    Rates {
        ds: state.s * dlog_s,
        dp: SymMatrix::symmetrize(dp),
        dq: SymMatrix::symmetrize(dq),
        dr,
    }
}

fn rhs_parts(q: &Matrix, r: &Matrix, ops: &OperatorSet) -> (f64, Matrix, Matrix, Matrix) {
    let c = ops.c.as_matrix();
    let dt = ops.d.transpose();
    let cq = c * q;
    let dlog_s = -0.5 * cq.trace() + ops.alpha;
    let cr = c * r;
    let dp = r.transpose() * &cr;
    let dq = ops.b.as_matrix() - q * &cq + &dt * q + q * &ops.d;
    let dr = -(q * &cr) + &dt * r;
    let sym = |m: Matrix| {
        let t = m.transpose();
        (m + t) * 0.5
    };
    (dlog_s, sym(dp), sym(dq), dr)
}

/// Integrated variables: `log s` keeps `s` positive.
#[derive(Clone)]
struct Flow {
    log_s: f64,
    p: Matrix,
    q: Matrix,
    r: Matrix,
}

impl Flow {
    fn deriv(&self, ops: &OperatorSet) -> Flow {
        let (log_s, p, q, r) = rhs_parts(&self.q, &self.r, ops);
        Flow { log_s, p, q, r }
    }

    fn axpy(&self, h: f64, k: &Flow) -> Flow {
        Flow {
            log_s: self.log_s + h * k.log_s,
            p: &self.p + &k.p * h,
            q: &self.q + &k.q * h,
            r: &self.r + &k.r * h,
        }
    }

    fn rk4_step(&self, ops: &OperatorSet, h: f64) -> Flow {
        let k1 = self.deriv(ops);
        let k2 = self.axpy(0.5 * h, &k1).deriv(ops);
        let k3 = self.axpy(0.5 * h, &k2).deriv(ops);
        let k4 = self.axpy(h, &k3).deriv(ops);
        let w = h / 6.0;
        Flow {
            log_s: self.log_s + w * (k1.log_s + 2.0 * k2.log_s + 2.0 * k3.log_s + k4.log_s),
            p: &self.p + (&k1.p + &k2.p * 2.0 + &k3.p * 2.0 + &k4.p) * w,
            q: &self.q + (&k1.q + &k2.q * 2.0 + &k3.q * 2.0 + &k4.q) * w,
            r: &self.r + (&k1.r + &k2.r * 2.0 + &k3.r * 2.0 + &k4.r) * w,
        }
    }
}

/// Integration control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepControl {
    /// Classical RK4 with a fixed number of equal steps.
    Fixed { steps: usize },
    /// RK4 with the step count doubled until two successive runs agree
    /// to relative `tol` at the horizon.
    Halving {
        tol: f64,
        initial_steps: usize,
        max_doublings: u32,
    },
}

impl StepControl {
    /// Default fixed step of `1e-3 T`.
    pub fn default_fixed() -> Self {
        StepControl::Fixed { steps: 1000 }
    }
}

impl Default for StepControl {
    fn default() -> Self {
        Self::default_fixed()
    }
}

/// States on a strictly increasing time grid, starting at the exact
/// initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<EvolutionState>,
    pub ops: OperatorSet,
}

impl Trajectory {
    pub fn last(&self) -> &EvolutionState {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn horizon(&self) -> f64 {
        self.last().t
    }

    /// State whose grid time is closest to `t`.
    pub fn nearest(&self, t: f64) -> &EvolutionState {
        let i = self
            .states
            .partition_point(|s| s.t < t)
            .min(self.states.len() - 1);
        if i > 0 && (self.states[i - 1].t - t).abs() < (self.states[i].t - t).abs() {
            &self.states[i - 1]
        } else {
            &self.states[i]
        }
    }

    /// CSV with columns `t, s, P_ij.., Q_ij.., R_ij..` (row-major).
    pub fn to_csv(&self) -> String {
        let n = self.ops.dim();
        let mut out = String::from("t,s");
        for name in ["P", "Q", "R"] {
            for i in 0..n {
                for j in 0..n {
                    out.push_str(&format!(",{name}_{i}_{j}"));
                }
            }
        }
        out.push('\n');
        for st in &self.states {
            out.push_str(&format!("{:e},{:e}", st.t, st.s));
            for m in [st.p.as_matrix(), st.q.as_matrix(), &st.r] {
                for i in 0..n {
                    for j in 0..n {
                        out.push_str(&format!(",{:e}", m[(i, j)]));
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_record(&self) -> TrajectoryRecord {
        TrajectoryRecord {
            dim: self.ops.dim(),
            states: self
                .states
                .iter()
                .map(|st| StateRecord {
                    t: st.t,
                    kernel: kernel::KernelRecord::from(&st.kernel()),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub t: f64,
    #[serde(flatten)]
    pub kernel: kernel::KernelRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub dim: usize,
    pub states: Vec<StateRecord>,
}

/// Relative asymmetry beyond which a step is rejected instead of projected.
const SYMMETRY_DRIFT: f64 = 1e-10;

fn run_fixed(ops: &OperatorSet, horizon: f64, steps: usize) -> Result<Trajectory> {
    let n = ops.dim();
    let tol = Tolerances::default();
    let h = horizon / steps as f64;
    let mut y = Flow {
        log_s: 0.0,
        p: Matrix::zeros(n, n),
        q: Matrix::zeros(n, n),
        r: Matrix::identity(n, n),
    };
    let mut states = Vec::with_capacity(steps + 1);
    states.push(EvolutionState::initial(n));
    for k in 1..=steps {
        let t = if k == steps { horizon } else { k as f64 * h };
        y = y.rk4_step(ops, h);
        let finite = y.log_s.is_finite()
            && y.p.iter().chain(y.q.iter()).chain(y.r.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::StepFailure {
                reason: format!("non-finite state at t = {t}"),
            });
        }
        for (what, m) in [("P", &y.p), ("Q", &y.q)] {
            let scale = max_abs(m);
            if scale > 0.0 && max_abs(&(m - m.transpose())) / scale > SYMMETRY_DRIFT {
                return Err(Error::StepFailure {
                    reason: format!("{what} drifted from symmetry at t = {t}"),
                });
            }
        }
        let p = SymMatrix::symmetrize(y.p.clone());
        let q = SymMatrix::symmetrize(y.q.clone());
        for (what, m) in [("P", &p), ("Q", &q)] {
            if m.check_psd(what, &tol).is_err() {
                return Err(Error::PsdLost {
                    what,
                    t,
                    min_eigenvalue: m.min_eigenvalue(),
                });
            }
        }
        y.p = p.as_matrix().clone();
        y.q = q.as_matrix().clone();
        states.push(EvolutionState {
            t,
            s: y.log_s.exp(),
            p,
            q,
            r: y.r.clone(),
        });
    }
    Ok(Trajectory {
        states,
        ops: ops.clone(),
    })
}

/// Integrates the flow from the exact initial state to `horizon`.
pub fn integrate(ops: &OperatorSet, horizon: f64, control: StepControl) -> Result<Trajectory> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    match control {
        StepControl::Fixed { steps } => {
            if steps == 0 {
                return Err(Error::InvalidArgument("steps must be >= 1".into()));
            }
            run_fixed(ops, horizon, steps)
        }
        StepControl::Halving {
            tol,
            initial_steps,
            max_doublings,
        } => {
            if !(tol > 0.0) || initial_steps == 0 {
                return Err(Error::InvalidArgument("halving control needs tol > 0 and steps >= 1".into()));
            }
            let mut steps = initial_steps;
            let mut coarse = run_fixed(ops, horizon, steps)?;
            let mut last_diff = f64::INFINITY;
            for _ in 0..max_doublings {
                steps *= 2;
                let fine = run_fixed(ops, horizon, steps)?;
                last_diff = fine.last().rel_diff(coarse.last());
                if last_diff < tol {
                    return Ok(fine);
                }
                coarse = fine;
            }
            Err(Error::StepFailure {
                reason: format!(
                    "step halving reached {steps} steps with relative change {last_diff:e} > {tol:e}"
                ),
            })
        }
    }
}

/// Integrates to `t` and returns only the final state (`t = 0` gives the
/// initial state).
pub fn flow_state(ops: &OperatorSet, t: f64, steps: usize) -> Result<EvolutionState> {
    if t == 0.0 {
        return Ok(EvolutionState::initial(ops.dim()));
    }
    Ok(integrate(ops, t, StepControl::Fixed { steps })?.last().clone())
}

/// Flow state at `t`: the closed form when `C = 0` or `D = 0`, RK4 with
/// step at most `1e-3` (and at least 256 steps) otherwise.
pub fn state_at(ops: &OperatorSet, t: f64) -> Result<EvolutionState> {
    if t == 0.0 {
        return Ok(EvolutionState::initial(ops.dim()));
    }
    if ops.c.is_zero() {
        closed_form_c0(ops, t)
    } else if ops.d.iter().all(|v| *v == 0.0) {
        closed_form_d0(ops, t)
    } else {
        let steps = ((t * 1000.0).ceil() as usize).max(256);
        flow_state(ops, t, steps)
    }
}

/// Closed form for `C = 0`: `s = e^{alpha t}`, `P = 0`,
/// `Q = int_0^t e^{D^T u} B e^{D u} du`, `R = e^{D^T t}`.
pub fn closed_form_c0(ops: &OperatorSet, t: f64) -> Result<EvolutionState> {
    if !ops.c.is_zero() {
        return Err(Error::CNotZero);
    }
    let n = ops.dim();
    Ok(EvolutionState {
        t,
        s: (ops.alpha * t).exp(),
        p: SymMatrix::zeros(n),
        q: conjugated_integral(&ops.b, &ops.d, t)?,
        r: matrix_exponential(&ops.d.transpose(), t)?,
    })
}

/// Generalized Mehler closed form for `D = 0`. With `X = B C` and
/// `T = tanh(t sqrt X)/sqrt X`:
/// `s = e^{alpha t} det(cosh(t sqrt X))^{-1/2}`, `P = C T`, `Q = T B`,
/// `R = cosh(t sqrt X)^{-1}`.
pub fn closed_form_d0(ops: &OperatorSet, t: f64) -> Result<EvolutionState> {
    if ops.d.iter().any(|v| *v != 0.0) {
        return Err(Error::DNotZero);
    }
    let tol = Tolerances::default();
    let x = ops.b.as_matrix() * ops.c.as_matrix();
    check_nonnegative_spectrum(&x, &tol)?;
    let (cosh, sinhc) = cosh_sinhc_pair(&x, t)?;
    let lu = cosh.lu();
    let tanhc = lu.solve(&sinhc).ok_or_else(|| Error::SeriesDivergence {
        reason: "cosh block is singular".into(),
    })?;
    let sech = lu.try_inverse().ok_or_else(|| Error::SeriesDivergence {
        reason: "cosh block is singular".into(),
    })?;
    let p = SymMatrix::symmetrize(ops.c.as_matrix() * &tanhc);
    let q = SymMatrix::symmetrize(&tanhc * ops.b.as_matrix());
    p.check_psd("closed-form P", &tol)?;
    q.check_psd("closed-form Q", &tol)?;
    let log_s = ops.alpha * t - 0.5 * log_det_cosh(&ops.b, &ops.c, t);
    Ok(EvolutionState {
        t,
        s: log_s.exp(),
        p,
        q,
        r: sech,
    })
}

/// Fourier-domain residual of the equation at `(x, y)`, with the time
/// derivative of the parameters taken from [`rhs`] at `state`.
pub fn pde_residual_fourier(
    state: &EvolutionState,
    ops: &OperatorSet,
    x: &Vector,
    y: &Vector,
) -> Complex64 {
    let rates = rhs(state, ops);
    pde_residual_with_rates(state, &rates, ops, x, y)
}

/// Residual with externally supplied parameter rates, e.g. the rates of the
/// true flow when `state` has been perturbed off it.
pub fn pde_residual_with_rates(
    state: &EvolutionState,
    rates: &Rates,
    ops: &OperatorSet,
    x: &Vector,
    y: &Vector,
) -> Complex64 {
    let g_hat = kernel::characteristic_functional(&state.kernel(), x, y);
    let i = Complex64::i();
    let dt_log = rates.ds / state.s - 0.5 * rates.dp.quad(x) - 0.5 * rates.dq.quad(y)
        + i * (&rates.dr * x).dot(y);
    // g = a + i b
    let a = -(state.q.as_matrix() * y);
    let b = &state.r * x;
    let dy = &ops.d * y;
    let c = ops.c.as_matrix();
    let ca = c * &a;
    let cb = c * &b;
    let grad_term = Complex64::new(a.dot(&dy), b.dot(&dy));
    let ggt = Complex64::new(a.dot(&ca) - b.dot(&cb), 2.0 * a.dot(&cb));
    let hess_term = 0.5 * (ggt - (c * state.q.as_matrix()).trace());
    let generator = -0.5 * ops.b.quad(y) + grad_term + hess_term + ops.alpha;
    g_hat * (dt_log - generator)
}

/// `{t, max_abs_residual, probe_points}` for one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub t: f64,
    pub max_abs_residual: f64,
    /// Largest `|residual| / (1 + |G^|)` over the probes.
    pub max_scaled_residual: f64,
    pub probe_points: usize,
}

/// Random probe pairs `(x, y)` with norms uniform in `[0, radius]`.
pub fn probe_points(n: usize, count: usize, radius: f64, seed: u64) -> Vec<(Vector, Vector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let dir = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let len = rng.random_range(0.0..=radius);
        let norm = dir.norm();
        if norm == 0.0 {
            dir
        } else {
            dir * (len / norm)
        }
    };
    (0..count)
        .map(|_| {
            let x = draw(&mut rng);
            let y = draw(&mut rng);
            (x, y)
        })
        .collect()
}

pub fn residual_report(
    state: &EvolutionState,
    ops: &OperatorSet,
    probes: &[(Vector, Vector)],
) -> ResidualReport {
    let rates = rhs(state, ops);
    let mut max_abs_residual = 0.0_f64;
    let mut max_scaled = 0.0_f64;
    for (x, y) in probes {
        let res = pde_residual_with_rates(state, &rates, ops, x, y).norm();
        let g = kernel::characteristic_functional(&state.kernel(), x, y).norm();
        max_abs_residual = max_abs_residual.max(res);
        max_scaled = max_scaled.max(res / (1.0 + g));
    }
    ResidualReport {
        t: state.t,
        max_abs_residual,
        max_scaled_residual: max_scaled,
        probe_points: probes.len(),
    }
}

// ---------------------------------------------------------------------------
// Generator recovery.

const RICHARDSON_LEVELS: usize = 5;

/// Richardson-extrapolated forward differences `(F(h_k) - F(0))/h_k` with
/// `h_k = h 2^-k`. Returns the estimate and the last two corrections.
fn richardson(diffs: Vec<Matrix>) -> (Matrix, f64, f64) {
    let levels = diffs.len();
    let mut table: Vec<Vec<Matrix>> = vec![diffs];
    for j in 1..levels {
        let factor = 2f64.powi(j as i32);
        let prev = &table[j - 1];
        let col: Vec<Matrix> = (1..prev.len())
            .map(|k| (&prev[k] * factor - &prev[k - 1]) / (factor - 1.0))
            .collect();
        table.push(col);
    }
    let diag: Vec<&Matrix> = (0..levels).map(|j| table[j].last().unwrap()).collect();
    let corr = |j: usize| max_abs(&(diag[j] - diag[j - 1]));
    let last = corr(levels - 1);
    let prev = corr(levels - 2);
    (diag[levels - 1].clone(), last, prev)
}

fn contracting(last: f64, prev: f64, scale: f64) -> bool {
    let scale = scale.max(1.0);
    last <= 1e-9 * scale || (last < 0.5 * prev && last <= 1e-2 * scale)
}

/// Recovers `(B, C, D, alpha)` from a flow `t -> state` by one-sided finite
/// differences at `t = 0` with Richardson extrapolation:
/// `B = Q'(0)`, `C = P'(0)`, `D^T = R'(0)`, `alpha = (log s)'(0)`.
pub fn recover_generators<F>(flow: F, h: f64) -> Result<OperatorSet>
where
    F: Fn(f64) -> Result<EvolutionState>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let mut states = Vec::with_capacity(RICHARDSON_LEVELS);
    for k in 0..RICHARDSON_LEVELS {
        let hk = h / 2f64.powi(k as i32);
        states.push((hk, flow(hk)?));
    }
    let n = states[0].1.dim();
    let ident = Matrix::identity(n, n);
    let fd = |f: &dyn Fn(&EvolutionState) -> Matrix| -> Vec<Matrix> {
        states.iter().map(|(hk, st)| f(st) / *hk).collect()
    };
    let extract = |what: &'static str, f: &dyn Fn(&EvolutionState) -> Matrix| -> Result<Matrix> {
        let (est, last, prev) = richardson(fd(f));
        if !contracting(last, prev, max_abs(&est)) {
            return Err(Error::NoisyFlow { what });
        }
        Ok(est)
    };
    let b = extract("B", &|st| st.q.as_matrix().clone())?;
    let c = extract("C", &|st| st.p.as_matrix().clone())?;
    let dt = extract("D", &|st| &st.r - &ident)?;
    let alpha = extract("alpha", &|st| Matrix::from_element(1, 1, st.s.ln()))?[(0, 0)];
    let b = project_psd(b, "B")?;
    let c = project_psd(c, "C")?;
    validate_operator_set(b, c, dt.transpose(), alpha)
}

/// Symmetrizes and clips eigenvalues that are negative only by
/// finite-difference noise.
fn project_psd(m: Matrix, what: &'static str) -> Result<SymMatrix> {
    let sym = SymMatrix::symmetrize(m);
    let eig = nalgebra::SymmetricEigen::new(sym.as_matrix().clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    let min = eig.eigenvalues.min();
    if min < -1e-6 * scale {
        return Err(Error::NotPsd {
            what,
            min_eigenvalue: min,
            threshold: -1e-6 * scale,
        });
    }
    if min >= 0.0 {
        return Ok(sym);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    Ok(SymMatrix::symmetrize(
        &eig.eigenvectors * Matrix::from_diagonal(&clipped) * eig.eigenvectors.transpose(),
    ))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    /// `sup_{0 < t <= T} int |y|^2 mu(t)(dy)` over the trajectory grid.
    pub sup_second_moment: f64,
    pub at_t: f64,
    pub finite: bool,
}

/// Second-moment diagnostic for `mu(t) = int G_x(t) mu0(dx)` along `traj`,
/// restricted to grid times in `(0, horizon]`.
pub fn moment_diagnostic(
    traj: &Trajectory,
    mu0: &InitialMeasure,
    horizon: f64,
) -> Result<MomentReport> {
    let mut sup = 0.0_f64;
    let mut at_t = 0.0;
    let mut seen = false;
    for st in traj.states.iter().filter(|s| s.t > 0.0 && s.t <= horizon) {
        let m = apply_to_initial(&st.kernel(), mu0)?.second_moment();
        if !seen || m > sup || !m.is_finite() {
            sup = m;
            at_t = st.t;
            seen = true;
        }
        if !m.is_finite() {
            break;
        }
    }
    if !seen {
        return Err(Error::InvalidArgument(
            "trajectory has no state in (0, T]".into(),
        ));
    }
    Ok(MomentReport {
        sup_second_moment: sup,
        at_t,
        finite: sup.is_finite(),
    })
}
