//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use gauss_semigroup::operators::{max_abs, rel_err};
use gauss_semigroup::riccati::{flow_state, probe_points, pde_residual_with_rates, rhs};
use gauss_semigroup::{
    closed_form_c0, closed_form_d0, compose, density, fk_kernel_mass, gaussianity_check,
    integrate, recover_generators, residual_report, sample_paths_with, state_at,
    validate_operator_set, Constraint, CylinderEstimate, CylinderSpec, EvolutionState, FkEstimate,
    FkOptions, GaussianKernel, LinearFunctional, Matrix, OperatorSet, Potential, Region,
    StepControl, SymMatrix, TimeGrid, Trajectory, Vector,
};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

const CLOSED_FORM_REL: f64 = 1e-8;
const MEHLER_ABS: f64 = 1e-12;
const SEMIGROUP_REL: f64 = 1e-8;
const RESIDUAL_SCALED: f64 = 1e-7;
const NEGATIVE_CONTROL_MIN: f64 = 1e-3;
const RECOVERY_ABS: f64 = 1e-4;
const SIGMAS: f64 = 3.0;
const FK_MAX_REL_STDERR: f64 = 0.02;
const MC_PATHS: usize = 100_000;
const FK_STEPS: usize = 1000;

const RK4_STEPS: usize = 1000;
const PROBES_PER_STATE: usize = 20;
const PROBE_RADIUS: f64 = 3.0;
const CONTROL_SHIFT: f64 = 0.1;

struct Outcome {
    passed: bool,
    detail: String,
}

fn run(id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let passed = out.passed && limit.is_none_or(|l| elapsed <= l);
    let budget = limit.map_or(String::new(), |l| format!(", limit {} s", l.as_secs()));
    println!(
        "[{}] {id:>2} {name}: {} ({:.2} s{budget})",
        if passed { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
    );
    passed
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

/// Random instances of the closed-form protocol: `n` cycles through
/// `{1, 2, 4, 6}`, the horizon is uniform in `(0, 2]`.
fn closed_form_instances(seed: u64, with_c: bool, with_d: bool) -> Vec<(OperatorSet, f64)> {
    let mut g = rng(seed);
    (0..20)
        .map(|i| {
            let n = [1, 2, 4, 6][i % 4];
            let ops = random_ops(&mut g, n, with_c, with_d);
            let t = 2.0 * (1.0 - g.random::<f64>());
            (ops, t)
        })
        .collect()
}

/// Largest relative deviation between the RK4 trajectory and the closed
/// form at eleven evenly spaced states.
fn trajectory_vs_closed_form(
    traj: &Trajectory,
    closed: impl Fn(&OperatorSet, f64) -> gauss_semigroup::Result<EvolutionState>,
) -> f64 {
    let last = traj.states.len() - 1;
    (0..=10)
        .map(|k| {
            let st = &traj.states[k * last / 10];
            let cf = closed(&traj.ops, st.t).unwrap();
            st.rel_diff(&cf)
        })
        .fold(0.0, f64::max)
}

fn closed_form_criterion(instances: &[(OperatorSet, f64)], d_zero: bool, trajectories: &mut Vec<Trajectory>) -> Outcome {
    let mut worst = 0.0_f64;
    let mut non_commuting_n4 = 0;
    for (ops, t) in instances {
        let traj = integrate(ops, *t, StepControl::Fixed { steps: RK4_STEPS }).unwrap();
        let err = if d_zero {
            if ops.dim() == 4 {
                let (b, c) = (ops.b.as_matrix(), ops.c.as_matrix());
                if max_abs(&(b * c - c * b)) > 1e-3 {
                    non_commuting_n4 += 1;
                }
            }
            trajectory_vs_closed_form(&traj, closed_form_d0)
        } else {
            trajectory_vs_closed_form(&traj, closed_form_c0)
        };
        worst = worst.max(err);
        trajectories.push(traj);
    }
    let mut detail = format!("max relative deviation {worst:.2e} (tol {CLOSED_FORM_REL:e}) over {} instances", instances.len());
    let mut passed = worst <= CLOSED_FORM_REL;
    if d_zero {
        detail.push_str(&format!(", {non_commuting_n4} non-commuting pairs at n = 4"));
        passed &= non_commuting_n4 > 0;
    }
    Outcome { passed, detail }
}

fn criterion_mehler() -> Outcome {
    let ops = validate_operator_set(SymMatrix::identity(1), SymMatrix::identity(1), Matrix::zeros(1, 1), 0.0).unwrap();
    let mut worst = 0.0_f64;
    for t in [0.1, 0.5, 1.0, 2.0] {
        let k = state_at(&ops, t).unwrap().kernel();
        for x in [-1.0, 0.0, 1.0] {
            for y in [-1.0, 0.0, 1.0] {
                let lib = density(&k, &vec1(x), &vec1(y)).unwrap();
                worst = worst.max((lib - mehler_density(t, x, y)).abs());
            }
        }
    }
    Outcome {
        passed: worst <= MEHLER_ABS,
        detail: format!("max |density - Mehler| {worst:.2e} (tol {MEHLER_ABS:e})"),
    }
}

fn kernel_rel_diff(a: &GaussianKernel, b: &GaussianKernel) -> f64 {
    ((a.s - b.s).abs() / b.s)
        .max(rel_err(a.p.as_matrix(), b.p.as_matrix()))
        .max(rel_err(a.q.as_matrix(), b.q.as_matrix()))
        .max(rel_err(&a.r, &b.r))
}

fn criterion_semigroup() -> Outcome {
    let mut g = rng(404);
    let mut worst = 0.0_f64;
    let mut worst_reversed = 0.0_f64;
    let mut flows = 0;
    for n in 1..=4 {
        for (with_c, with_d) in [(false, true), (true, false), (true, true)] {
            let ops = random_ops(&mut g, n, with_c, with_d);
            let kernels: Vec<GaussianKernel> = (1..=20)
                .map(|k| state_at(&ops, 0.1 * k as f64).unwrap().kernel())
                .collect();
            for u in 1..=10 {
                for v in 1..=10 {
                    let target = &kernels[u + v - 1];
                    let composed = compose(&kernels[u - 1], &kernels[v - 1]).unwrap();
                    worst = worst.max(kernel_rel_diff(&composed, target));
                    let reversed = compose(&kernels[v - 1], &kernels[u - 1]).unwrap();
                    worst_reversed = worst_reversed.max(kernel_rel_diff(&reversed, target));
                }
            }
            flows += 1;
        }
    }
    Outcome {
        passed: worst <= SEMIGROUP_REL,
        detail: format!(
            "max relative deviation {worst:.2e} (tol {SEMIGROUP_REL:e}) over {flows} flows x 100 (u, v); reversed order {worst_reversed:.2e}"
        ),
    }
}

fn perturbed(st: &EvolutionState, eps: f64) -> EvolutionState {
    let n = st.dim();
    let shift = Matrix::identity(n, n) * eps;
    EvolutionState {
        t: st.t,
        s: st.s * (1.0 + eps),
        p: SymMatrix::symmetrize(st.p.as_matrix() + &shift),
        q: SymMatrix::symmetrize(st.q.as_matrix() + &shift),
        r: &st.r + &shift,
    }
}

fn criterion_residual(trajectories: &[Trajectory]) -> Outcome {
    let mut worst = 0.0_f64;
    let mut weakest_control = f64::INFINITY;
    let mut states = 0usize;
    for (i, traj) in trajectories.iter().enumerate() {
        let probes = probe_points(traj.ops.dim(), PROBES_PER_STATE, PROBE_RADIUS, 5000 + i as u64);
        for st in &traj.states {
            worst = worst.max(residual_report(st, &traj.ops, &probes).max_scaled_residual);
            states += 1;
        }
        let truth = traj.last();
        let rates = rhs(truth, &traj.ops);
        let off = perturbed(truth, CONTROL_SHIFT);
        let control = probes
            .iter()
            .map(|(x, y)| {
                let res = pde_residual_with_rates(&off, &rates, &traj.ops, x, y).norm();
                let g = gauss_semigroup::characteristic_functional(&off.kernel(), x, y).norm();
                res / (1.0 + g)
            })
            .fold(0.0, f64::max);
        weakest_control = weakest_control.min(control);
    }
    Outcome {
        passed: worst <= RESIDUAL_SCALED && weakest_control > NEGATIVE_CONTROL_MIN,
        detail: format!(
            "max |res|/(1+|G^|) {worst:.2e} (tol {RESIDUAL_SCALED:e}) over {states} states x {PROBES_PER_STATE} probes; weakest negative control {weakest_control:.2e} (must exceed {NEGATIVE_CONTROL_MIN:e})"
        ),
    }
}

fn criterion_recovery() -> Outcome {
    let mut g = rng(606);
    let mut worst = 0.0_f64;
    for i in 0..10 {
        let n = 1 + i % 4;
        let ops = random_ops(&mut g, n, true, true);
        let rec = recover_generators(|t| flow_state(&ops, t, 64), 0.01).unwrap();
        let err = max_abs(&(rec.b.as_matrix() - ops.b.as_matrix()))
            .max(max_abs(&(rec.c.as_matrix() - ops.c.as_matrix())))
            .max(max_abs(&(&rec.d - &ops.d)))
            .max((rec.alpha - ops.alpha).abs());
        worst = worst.max(err);
    }
    Outcome {
        passed: worst <= RECOVERY_ABS,
        detail: format!("max round-trip error {worst:.2e} (tol {RECOVERY_ABS:e}) over 10 instances"),
    }
}

const FK_CASES: [(f64, f64, f64); 3] = [(1.0, 0.5, 0.0), (1.0, 1.0, 1.0), (2.0, 0.5, 0.5)];

fn fk_estimates(threads: Option<usize>) -> Vec<FkEstimate> {
    let brownian = validate_operator_set(SymMatrix::identity(1), SymMatrix::zeros(1), Matrix::zeros(1, 1), 0.0).unwrap();
    FK_CASES
        .iter()
        .enumerate()
        .map(|(i, &(c, t, x))| {
            let v = Potential::quadratic(SymMatrix::from_diagonal(&[c]), 0.0).unwrap();
            let grid = TimeGrid::uniform(t, FK_STEPS).unwrap();
            let opts = FkOptions {
                samples: MC_PATHS,
                seed: 7000 + i as u64,
                threads,
                experimental_weighted_base: false,
            };
            fk_kernel_mass(&brownian, &v, &vec1(x), t, &Region::Whole, &grid, &opts).unwrap()
        })
        .collect()
}

fn criterion_fk(estimates: &[FkEstimate]) -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for (est, &(c, t, x)) in estimates.iter().zip(&FK_CASES) {
        let mehler = validate_operator_set(SymMatrix::identity(1), SymMatrix::from_diagonal(&[c]), Matrix::zeros(1, 1), 0.0).unwrap();
        let exact = state_at(&mehler, t).unwrap().kernel().mass(&vec1(x));
        let z = (est.estimate - exact).abs() / est.stderr;
        let rel = est.stderr / est.estimate;
        passed &= z < SIGMAS && rel < FK_MAX_REL_STDERR;
        parts.push(format!("(c={c}, t={t}, x={x}): {:.5} vs {exact:.5}, {z:.2} sigma, stderr/est {rel:.2e}", est.estimate));
    }
    Outcome {
        passed,
        detail: parts.join("; "),
    }
}

struct CylinderResults {
    half_line: CylinderEstimate,
    boxes: Vec<(CylinderEstimate, f64)>,
    gaussian_passed: bool,
    ou_passed: bool,
    cubed_failed: bool,
}

const OU_B: f64 = 1.5;
const OU_D: f64 = -0.8;
const OU_X: f64 = 0.4;
const BOXES: [((f64, f64), (f64, f64)); 3] = [
    ((-0.5, 1.0), (0.0, 2.0)),
    ((0.2, 0.9), (-1.0, 0.3)),
    ((-2.0, 0.0), (-0.5, 0.5)),
];

/// Chained-Gaussian quadrature for two-time box masses of the scalar OU
/// path.
fn box_oracle(t1: f64, t2: f64, box1: (f64, f64), box2: (f64, f64)) -> f64 {
    let (r1, q1) = scalar_ou(OU_B, OU_D, t1);
    let (r2, q2) = scalar_ou(OU_B, OU_D, t2 - t1);
    let step = Normal::new(0.0, q2.sqrt()).unwrap();
    integrate_scalar(
        |y| normal_pdf(y, r1 * OU_X, q1) * (step.cdf(box2.1 - r2 * y) - step.cdf(box2.0 - r2 * y)),
        box1.0,
        box1.1,
        40,
    )
}

fn cylinder_results(threads: Option<usize>) -> CylinderResults {
    let grid = TimeGrid::uniform(1.0, 10).unwrap();
    let mut g = rng(808);
    let ou2 = random_ops(&mut g, 2, false, true).with_alpha(0.0);
    let centered = sample_paths_with(&ou2, &Vector::zeros(2), &grid, MC_PATHS, 81, threads).unwrap();
    let half_line = gauss_semigroup::cylinder_mass(
        &centered,
        &CylinderSpec {
            constraints: vec![Constraint {
                time: 0.5,
                region: Region::Box { lower: vec![0.0, f64::NEG_INFINITY], upper: vec![f64::INFINITY; 2] },
            }],
            terminal: Region::Whole,
        },
    )
    .unwrap();

    let ou1 = validate_operator_set(
        SymMatrix::from_diagonal(&[OU_B]),
        SymMatrix::zeros(1),
        Matrix::from_element(1, 1, OU_D),
        0.0,
    )
    .unwrap();
    let scalar = sample_paths_with(&ou1, &vec1(OU_X), &grid, MC_PATHS, 82, threads).unwrap();
    let boxes = BOXES
        .iter()
        .map(|&(b1, b2)| {
            let spec = CylinderSpec {
                constraints: vec![Constraint {
                    time: 0.4,
                    region: Region::Box { lower: vec![b1.0], upper: vec![b1.1] },
                }],
                terminal: Region::Box { lower: vec![b2.0], upper: vec![b2.1] },
            };
            (gauss_semigroup::cylinder_mass(&scalar, &spec).unwrap(), box_oracle(0.4, 1.0, b1, b2))
        })
        .collect();

    let brownian = validate_operator_set(SymMatrix::identity(2), SymMatrix::zeros(2), Matrix::zeros(2, 2), 0.0).unwrap();
    let mut plain = sample_paths_with(&brownian, &Vector::zeros(2), &grid, MC_PATHS, 83, threads).unwrap();
    let functionals = vec![
        LinearFunctional { time: 0.3, direction: vec![1.0, 0.0] },
        LinearFunctional { time: 1.0, direction: vec![0.0, 1.0] },
        LinearFunctional { time: 0.7, direction: vec![1.0, 1.0] },
    ];
    let gaussian_passed = gaussianity_check(&plain, &functionals).unwrap().passed;
    let ou_passed = gaussianity_check(&centered, &functionals).unwrap().passed;
    for s in plain.samples.iter_mut() {
        for v in s.values.iter_mut() {
            v.apply(|z| *z = z.powi(3));
        }
    }
    let cubed_failed = !gaussianity_check(&plain, &functionals).unwrap().passed;
    CylinderResults {
        half_line,
        boxes,
        gaussian_passed,
        ou_passed,
        cubed_failed,
    }
}

fn criterion_cylinder(res: &CylinderResults) -> Outcome {
    let h = &res.half_line;
    let z_half = (h.estimate - 0.5).abs() / h.stderr;
    let mut passed = z_half < SIGMAS;
    let mut parts = vec![format!("half-line {:.4} ({z_half:.2} sigma)", h.estimate)];
    for (est, oracle) in &res.boxes {
        let z = (est.estimate - oracle).abs() / est.stderr;
        passed &= z < SIGMAS;
        parts.push(format!("box {:.4} vs {oracle:.4} ({z:.2} sigma)", est.estimate));
    }
    passed &= res.gaussian_passed && res.ou_passed && res.cubed_failed;
    parts.push(format!(
        "Gaussianity Brownian {} OU {}, cubed control {}",
        if res.gaussian_passed { "passes" } else { "fails" },
        if res.ou_passed { "passes" } else { "fails" },
        if res.cubed_failed { "fails" } else { "passes" },
    ));
    Outcome {
        passed,
        detail: parts.join("; "),
    }
}

fn criterion_truncation() -> Outcome {
    let (c, d, t) = (0.5, -0.2, 1.0);
    let trace_q = |n: usize| {
        let diag: Vec<f64> = (1..=n).map(|k| (k as f64).powi(-2)).collect();
        let ops = validate_operator_set(
            SymMatrix::from_diagonal(&diag),
            SymMatrix::from_diagonal(&vec![c; n]),
            Matrix::identity(n, n) * d,
            0.0,
        )
        .unwrap();
        integrate(&ops, t, StepControl::Fixed { steps: RK4_STEPS }).unwrap().last().q.trace()
    };
    let traces: Vec<f64> = [4, 8, 16, 32].iter().map(|&n| trace_q(n)).collect();
    // small eigenvalues b evolve as b (e^{2dt} - 1)/(2d)
    let kappa = ((2.0 * d * t).exp() - 1.0) / (2.0 * d);
    let mut passed = true;
    let mut parts = Vec::new();
    let mut prev = f64::INFINITY;
    for (i, n) in [4usize, 8, 16].iter().enumerate() {
        let inc = traces[i + 1] - traces[i];
        let tail: f64 = ((n + 1)..=(2 * n)).map(|k| (k as f64).powi(-2)).sum();
        let ratio = inc / (kappa * tail);
        passed &= inc > 0.0 && inc < prev && (ratio - 1.0).abs() < 0.05;
        prev = inc;
        parts.push(format!("{n}->{}: {inc:.4e} (tail ratio {ratio:.4})", 2 * n));
    }
    Outcome {
        passed,
        detail: format!("tr Q increments {}; monotone {}", parts.join(", "), if passed { "yes" } else { "no" }),
    }
}

fn criterion_determinism(fk: &[FkEstimate], cyl: &CylinderResults) -> Outcome {
    let mut same = true;
    for threads in [Some(1), Some(4)] {
        same &= fk_estimates(threads).as_slice() == fk;
        let other = cylinder_results(threads);
        same &= other.half_line == cyl.half_line
            && other.boxes == cyl.boxes
            && other.gaussian_passed == cyl.gaussian_passed
            && other.ou_passed == cyl.ou_passed
            && other.cubed_failed == cyl.cubed_failed;
    }
    Outcome {
        passed: same,
        detail: format!(
            "criteria 7-8 estimates at 1 and 4 threads {} the default pool",
            if same { "bit-identical to" } else { "differ from" }
        ),
    }
}

fn main() -> ExitCode {
    let mut all = true;
    let mut trajectories = Vec::new();
    let c0 = closed_form_instances(101, false, true);
    let d0 = closed_form_instances(202, true, false);
    all &= run(1, "closed form, C = 0", secs(10), || closed_form_criterion(&c0, false, &mut trajectories));
    all &= run(2, "closed form, D = 0", secs(10), || closed_form_criterion(&d0, true, &mut trajectories));
    all &= run(3, "classical Mehler kernel", secs(1), criterion_mehler);
    all &= run(4, "semigroup property", secs(30), criterion_semigroup);
    all &= run(5, "Fourier residual", secs(30), || criterion_residual(&trajectories));
    all &= run(6, "generator recovery", secs(30), criterion_recovery);
    let mut fk = Vec::new();
    all &= run(7, "Feynman-Kac vs Mehler", secs(120), || {
        fk = fk_estimates(None);
        criterion_fk(&fk)
    });
    let mut cyl = None;
    all &= run(8, "cylinder masses and Gaussianity", secs(120), || {
        let res = cylinder_results(None);
        let out = criterion_cylinder(&res);
        cyl = Some(res);
        out
    });
    all &= run(9, "truncation convergence", secs(10), criterion_truncation);
    let cyl = cyl.expect("criterion 8 ran");
    all &= run(10, "determinism across thread counts", None, || criterion_determinism(&fk, &cyl));
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
