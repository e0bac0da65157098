use anyhow::anyhow;
use gauss_semigroup::operators::{max_abs, rel_err};
use gauss_semigroup::riccati::{flow_state, moment_diagnostic, probe_points};
use gauss_semigroup::{
    closed_form_c0, closed_form_d0, compose, condition_endpoint, cylinder_mass, fk_evolve,
    fk_kernel_mass, integrate, recover_generators, residual_report, sample_paths_with, state_at,
    validate_operator_set, validate_potential, EvolutionState, FkOptions, GaussianKernel,
    InitialMeasure, KernelRecord, Matrix, OperatorSet, PathEnsemble, PotentialKind, Region,
    StepControl, SymMatrix, TimeGrid,
};
use serde_json::{json, Value};

use crate::config::{EnsembleFormat, ExperimentConfig, Property};
use crate::Failure;

/// What a command produced: the report payload, the pass/fail verdict and
/// any side files.
pub struct Outcome {
    pub results: Value,
    pub passed: bool,
    pub files: Vec<(String, Vec<u8>)>,
}

const SIGMAS: f64 = 3.0;
const FAULT_SIZE: f64 = 1e-3;

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn json_bytes(v: &impl serde::Serialize) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

type ClosedForm = fn(&OperatorSet, f64) -> gauss_semigroup::Result<EvolutionState>;

fn closed_form_for(ops: &OperatorSet) -> Result<(&'static str, ClosedForm), Failure> {
    if ops.c.is_zero() {
        Ok(("c_zero", closed_form_c0))
    } else if ops.d.iter().all(|v| *v == 0.0) {
        Ok(("d_zero", closed_form_d0))
    } else {
        Err(Failure::Config(anyhow!("closed forms need C = 0 or D = 0")))
    }
}

pub fn evolve(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let ops = cfg.operators()?;
    let e = &cfg.evolve;
    let compare = if e.compare_closed_form {
        Some(closed_form_for(&ops)?)
    } else {
        None
    };
    let initial = e.initial.as_ref().map(|s| cfg.initial(s)).transpose()?;
    let traj = integrate(&ops, e.horizon, e.control)?;
    let probes = probe_points(ops.dim(), e.probes, e.probe_radius, cfg.seed);
    let residuals: Vec<_> = traj.states.iter().map(|st| residual_report(st, &ops, &probes)).collect();
    let max_abs_residual = residuals.iter().map(|r| r.max_abs_residual).fold(0.0, f64::max);
    let max_scaled = residuals.iter().map(|r| r.max_scaled_residual).fold(0.0, f64::max);
    let mut passed = max_scaled <= e.residual_tol;
    let mut results = json!({
        "horizon": e.horizon,
        "steps": traj.states.len() - 1,
        "final_state": KernelRecord::from(&traj.last().kernel()),
        "max_abs_residual": max_abs_residual,
        "max_scaled_residual": max_scaled,
        "residual_tol": e.residual_tol,
        "probes": e.probes,
    });
    if let Some((form, closed)) = compare {
        let mut worst = 0.0_f64;
        for st in &traj.states {
            worst = worst.max(st.rel_diff(&closed(&ops, st.t)?));
        }
        passed &= worst <= e.closed_form_tol;
        results["closed_form"] = json!({
            "form": form,
            "max_parameter_deviation": worst,
            "tolerance": e.closed_form_tol,
        });
    }
    if let Some(mu0) = &initial {
        let m = moment_diagnostic(&traj, mu0, e.horizon)?;
        passed &= m.finite;
        results["moments"] = serde_json::to_value(m).expect("serializable");
    }
    Ok(Outcome {
        results,
        passed,
        files: vec![
            ("evolve.trajectory.csv".into(), traj.to_csv().into_bytes()),
            ("evolve.trajectory.json".into(), json_bytes(&traj.to_record())),
            ("evolve.residual.json".into(), json_bytes(&residuals)),
        ],
    })
}

pub fn closed_form(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let ops = cfg.operators()?;
    let (form, closed) = closed_form_for(&ops)?;
    let mut states = Vec::new();
    for &t in &cfg.closed_form.times {
        let st = if t == 0.0 {
            EvolutionState::initial(ops.dim())
        } else {
            closed(&ops, t)?
        };
        states.push(json!({"t": t, "kernel": KernelRecord::from(&st.kernel())}));
    }
    Ok(Outcome {
        results: json!({"form": form, "states": states}),
        passed: true,
        files: vec![],
    })
}

fn kernel_rel_diff(a: &GaussianKernel, b: &GaussianKernel) -> f64 {
    ((a.s - b.s).abs() / b.s)
        .max(rel_err(a.p.as_matrix(), b.p.as_matrix()))
        .max(rel_err(a.q.as_matrix(), b.q.as_matrix()))
        .max(rel_err(&a.r, &b.r))
}

fn recovery_errors(ops: &OperatorSet, steps: usize, h: f64) -> Result<(OperatorSet, Value, f64), Failure> {
    let rec = recover_generators(|t| flow_state(ops, t, steps), h)?;
    let errs = [
        ("B", max_abs(&(rec.b.as_matrix() - ops.b.as_matrix()))),
        ("C", max_abs(&(rec.c.as_matrix() - ops.c.as_matrix()))),
        ("D", max_abs(&(&rec.d - &ops.d))),
        ("alpha", (rec.alpha - ops.alpha).abs()),
    ];
    let worst = errs.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let per: serde_json::Map<String, Value> = errs.iter().map(|(k, e)| (k.to_string(), json!(e))).collect();
    Ok((rec, Value::Object(per), worst))
}

pub fn verify(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let ops = cfg.operators()?;
    let v = &cfg.verify;
    let initial = match &v.initial {
        Some(s) => cfg.initial(s)?,
        None => InitialMeasure::dirac(gauss_semigroup::Vector::zeros(ops.dim())),
    };
    let mut checks = Vec::new();
    let mut all = true;
    for prop in &v.properties {
        let check = match prop {
            Property::Semigroup => {
                let mut worst = 0.0_f64;
                for &u in &v.times {
                    let mut later = state_at(&ops, u)?.kernel();
                    if v.inject_fault {
                        later.q = SymMatrix::symmetrize(
                            later.q.as_matrix() + Matrix::identity(ops.dim(), ops.dim()) * FAULT_SIZE,
                        );
                    }
                    for &w in &v.times {
                        let earlier = state_at(&ops, w)?.kernel();
                        let target = state_at(&ops, u + w)?.kernel();
                        worst = worst.max(kernel_rel_diff(&compose(&later, &earlier)?, &target));
                    }
                }
                json!({
                    "property": "semigroup",
                    "passed": worst <= v.semigroup_tol,
                    "max_deviation": worst,
                    "tolerance": v.semigroup_tol,
                    "fault_injected": v.inject_fault,
                })
            }
            Property::Recovery => {
                let (_, per, worst) = recovery_errors(&ops, v.recovery_steps, v.recovery_h)?;
                json!({
                    "property": "recovery",
                    "passed": worst <= v.recovery_tol,
                    "max_deviation": worst,
                    "per_operator": per,
                    "tolerance": v.recovery_tol,
                })
            }
            Property::Moments => {
                let traj = integrate(&ops, v.moment_horizon, StepControl::default())?;
                let m = moment_diagnostic(&traj, &initial, v.moment_horizon)?;
                json!({
                    "property": "moments",
                    "passed": m.finite,
                    "sup_second_moment": m.sup_second_moment,
                    "at_t": m.at_t,
                })
            }
        };
        all &= check["passed"].as_bool().unwrap_or(false);
        checks.push(check);
    }
    Ok(Outcome {
        results: json!({"checks": checks}),
        passed: all,
        files: vec![],
    })
}

fn ensemble_json(ens: &PathEnsemble) -> Value {
    json!({
        "dim": ens.start.len(),
        "seed": ens.seed,
        "grid": ens.grid.times(),
        "samples": ens.samples.iter().map(|s| json!({
            "log_weight": s.log_weight,
            "values": s.values.iter().map(|v| v.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}

pub fn sample(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let ops = cfg.operators()?;
    let s = &cfg.sample;
    let start = cfg.point("sample.start", &s.start)?;
    let terminal = s.terminal.as_ref().map(|t| cfg.terminal(t)).transpose()?;
    let grid = TimeGrid::uniform(s.horizon, s.steps)?;
    let (ens, acceptance) = match &terminal {
        None => (sample_paths_with(&ops, &start, &grid, s.samples, cfg.seed, cfg.threads)?, 1.0),
        Some(t) => {
            let c = condition_endpoint(&ops, &start, &grid, s.samples, cfg.seed, t, cfg.threads)?;
            (c.ensemble, c.acceptance_rate)
        }
    };
    let ends = ens.values_at(grid.steps());
    let mean: Vec<f64> = (0..ops.dim())
        .map(|i| ends.iter().map(|v| v[i]).sum::<f64>() / ends.len() as f64)
        .collect();
    let max_lw = ens.samples.iter().map(|s| s.log_weight.abs()).fold(0.0, f64::max);
    let (name, bytes) = match s.format {
        EnsembleFormat::Csv => ("sample.ensemble.csv", ens.to_csv().into_bytes()),
        EnsembleFormat::Json => ("sample.ensemble.json", json_bytes(&ensemble_json(&ens))),
    };
    Ok(Outcome {
        results: json!({
            "samples": ens.len(),
            "steps": grid.steps(),
            "acceptance_rate": acceptance,
            "all_weights_zero": max_lw == 0.0,
            "max_abs_log_weight": max_lw,
            "terminal_mean": mean,
        }),
        passed: true,
        files: vec![(name.into(), bytes)],
    })
}

pub fn cylinder(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let ops = cfg.operators()?;
    let c = &cfg.cylinder;
    let start = cfg.point("cylinder.start", &c.start)?;
    let grid = TimeGrid::uniform(c.horizon, c.steps)?;
    let ens = sample_paths_with(&ops, &start, &grid, c.samples, cfg.seed, cfg.threads)?;
    let est = cylinder_mass(&ens, &c.spec)?;
    let mut results = serde_json::to_value(est).expect("serializable");
    let mut passed = true;
    if let Some(expected) = c.expected {
        let diff = (est.estimate - expected).abs();
        let sigma = if est.stderr > 0.0 { diff / est.stderr } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
        passed = sigma < SIGMAS;
        results["expected"] = json!(expected);
        results["deviation_sigma"] = json!(sigma);
    }
    results["samples"] = json!(c.samples);
    Ok(Outcome {
        results,
        passed,
        files: vec![],
    })
}

pub fn fk(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let ops = cfg.operators()?;
    let f = &cfg.fk;
    let spec = f
        .potential
        .as_ref()
        .ok_or_else(|| Failure::Config(anyhow!("fk.potential is required")))?;
    let v = cfg.potential(spec)?;
    f.terminal.check_dim(ops.dim()).map_err(|e| Failure::Config(anyhow!("fk.terminal: {e}")))?;
    let start = cfg.point("fk.start", &f.start)?;
    let initial = f.initial.as_ref().map(|s| cfg.initial(s)).transpose()?;
    let grid = TimeGrid::uniform(f.horizon, f.steps)?;
    let opts = FkOptions {
        samples: f.samples,
        seed: cfg.seed,
        threads: cfg.threads,
        experimental_weighted_base: f.experimental_weighted_base,
    };
    let check = validate_potential(&v, ops.dim(), f.validation_probes, cfg.seed);
    let mut passed = !check.refuted;
    let est = fk_kernel_mass(&ops, &v, &start, f.horizon, &f.terminal, &grid, &opts)?;
    let mut results = json!({
        "estimate": est,
        "potential_check": check,
    });
    if f.compare_closed_form {
        let PotentialKind::Quadratic { cv, offset } = &v.kind else {
            return Err(Failure::Config(anyhow!("the closed-form comparison needs a quadratic potential")));
        };
        if f.terminal != Region::Whole {
            return Err(Failure::Config(anyhow!("the closed-form comparison needs terminal = whole")));
        }
        let total = validate_operator_set(
            ops.b.clone(),
            SymMatrix::symmetrize(ops.c.as_matrix() + cv.as_matrix()),
            ops.d.clone(),
            ops.alpha + offset,
        )?;
        let exact = state_at(&total, f.horizon)?.kernel().mass(&start);
        let sigma = (est.estimate - exact).abs() / est.stderr;
        passed &= sigma < SIGMAS;
        results["closed_form"] = json!({"value": exact, "deviation_sigma": sigma});
    }
    if let Some(mu0) = &initial {
        let evolved = fk_evolve(&ops, &v, mu0, f.horizon, &f.test_functions, &grid, &opts)?;
        results["evolved"] = json!(f
            .test_functions
            .iter()
            .zip(&evolved)
            .map(|(t, e)| json!({"test_function": t, "estimate": e}))
            .collect::<Vec<_>>());
    }
    Ok(Outcome {
        results,
        passed,
        files: vec![],
    })
}

pub fn recover(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let ops = cfg.operators()?;
    let r = &cfg.recover;
    let (rec, per, worst) = recovery_errors(&ops, r.steps, r.h)?;
    Ok(Outcome {
        results: json!({
            "recovered": {
                "b": rows(rec.b.as_matrix()),
                "c": rows(rec.c.as_matrix()),
                "d": rows(&rec.d),
                "alpha": rec.alpha,
            },
            "errors": per,
            "max_error": worst,
            "tolerance": r.tol,
        }),
        passed: worst <= r.tol,
        files: vec![],
    })
}
