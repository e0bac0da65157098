use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use gauss_semigroup::kernel::GaussianMeasure;
use gauss_semigroup::{
    random_operator_set, validate_operator_set_with, CylinderSpec, InitialMeasure, Matrix,
    OperatorSet, OperatorSpec, Potential, Region, StepControl, SymMatrix, TestFunction, Tolerances,
    Vector,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<OperatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<OperatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<OperatorSpec>,
    #[serde(default)]
    pub alpha: f64,
    /// Draw `B`, `C`, `D`, `alpha` at random instead of reading them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_operators: Option<RandomOperators>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Not part of the experiment identity.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub evolve: EvolveConfig,
    #[serde(default)]
    pub closed_form: ClosedFormConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub cylinder: CylinderConfig,
    #[serde(default)]
    pub fk: FkConfig,
    #[serde(default)]
    pub recover: RecoverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomOperators {
    pub seed: u64,
    #[serde(default = "yes")]
    pub with_c: bool,
    #[serde(default = "yes")]
    pub with_d: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Dirac { x: Vec<f64> },
    Mixture { points: Vec<Vec<f64>>, weights: Vec<f64> },
    Gaussian { mean: Vec<f64>, cov: OperatorSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `-(C_v x, x)/2 + offset`
    Quadratic {
        cv: OperatorSpec,
        #[serde(default)]
        offset: f64,
    },
    /// `amplitude cos((wave, x))`
    Cosine { amplitude: f64, wave: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalSpec {
    Point { y: Vec<f64> },
    Gaussian { mean: Vec<f64>, cov: OperatorSpec },
    Set { region: Region },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    pub horizon: f64,
    pub control: StepControl,
    pub residual_tol: f64,
    pub probes: usize,
    pub probe_radius: f64,
    pub compare_closed_form: bool,
    pub closed_form_tol: f64,
    pub initial: Option<InitialSpec>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            control: StepControl::default(),
            residual_tol: 1e-7,
            probes: 20,
            probe_radius: 3.0,
            compare_closed_form: false,
            closed_form_tol: 1e-8,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedFormConfig {
    pub times: Vec<f64>,
}

impl Default for ClosedFormConfig {
    fn default() -> Self {
        Self { times: vec![0.5, 1.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Semigroup,
    Recovery,
    Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub properties: Vec<Property>,
    pub times: Vec<f64>,
    pub semigroup_tol: f64,
    pub recovery_h: f64,
    pub recovery_steps: usize,
    pub recovery_tol: f64,
    pub moment_horizon: f64,
    pub initial: Option<InitialSpec>,
    /// Negative control: perturbs `Q` of one factor before composing.
    pub inject_fault: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            properties: vec![Property::Semigroup, Property::Recovery, Property::Moments],
            times: vec![0.1, 0.3, 0.5, 1.0],
            semigroup_tol: 1e-8,
            recovery_h: 0.01,
            recovery_steps: 64,
            recovery_tol: 1e-4,
            moment_horizon: 1.0,
            initial: None,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub horizon: f64,
    pub steps: usize,
    pub samples: usize,
    pub start: Option<Vec<f64>>,
    pub format: EnsembleFormat,
    pub terminal: Option<TerminalSpec>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 100,
            samples: 1000,
            start: None,
            format: EnsembleFormat::Csv,
            terminal: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CylinderConfig {
    pub horizon: f64,
    pub steps: usize,
    pub samples: usize,
    pub start: Option<Vec<f64>>,
    pub spec: CylinderSpec,
    /// Reference mass; the run fails beyond 3 standard errors.
    pub expected: Option<f64>,
}

impl Default for CylinderConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 100,
            samples: 10_000,
            start: None,
            spec: CylinderSpec {
                constraints: vec![],
                terminal: Region::Whole,
            },
            expected: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FkConfig {
    pub horizon: f64,
    pub steps: usize,
    pub samples: usize,
    pub start: Option<Vec<f64>>,
    pub potential: Option<PotentialSpec>,
    pub terminal: Region,
    /// Compare with the Gaussian kernel of `(B, C_v, D, offset)` for a
    /// quadratic potential.
    pub compare_closed_form: bool,
    pub experimental_weighted_base: bool,
    pub validation_probes: usize,
    pub initial: Option<InitialSpec>,
    pub test_functions: Vec<TestFunction>,
}

impl Default for FkConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 1000,
            samples: 10_000,
            start: None,
            potential: None,
            terminal: Region::Whole,
            compare_closed_form: false,
            experimental_weighted_base: false,
            validation_probes: 1000,
            initial: None,
            test_functions: vec![TestFunction::One],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverConfig {
    pub h: f64,
    pub steps: usize,
    pub tol: f64,
}

impl Default for RecoverConfig {
    fn default() -> Self {
        Self {
            h: 0.01,
            steps: 64,
            tol: 1e-4,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(anyhow!("{e}"))
}

/// Reads a config file, or the `config` block of an emitted report.
pub fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::Config)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        let msg = e.to_string();
        let msg = msg.split(" at line ").next().unwrap_or_default().to_string();
        config_err(format!("{}:{}:{}: {msg}", path.display(), e.line(), e.column()))
    })?;
    let value = match value {
        serde_json::Value::Object(mut map) if map.contains_key("config_hash") => map
            .remove("config")
            .ok_or_else(|| config_err("report has no embedded config"))?,
        other => other,
    };
    serde_json::from_value(value).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn positive(what: &str, v: f64) -> Result<(), Failure> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("{what} must be positive and finite, got {v}")))
    }
}

fn at_least_one(what: &str, v: usize) -> Result<(), Failure> {
    if v >= 1 {
        Ok(())
    } else {
        Err(config_err(format!("{what} must be >= 1")))
    }
}

impl ExperimentConfig {
    /// SHA-256 of the canonical JSON form (sorted keys, no whitespace).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&self.canonical()).expect("config serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn canonical(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), Failure> {
        at_least_one("dim", self.dim)?;
        if self.threads == Some(0) {
            return Err(config_err("threads must be >= 1"));
        }
        positive("tolerances.psd_rel", self.tolerances.psd_rel)?;
        positive("tolerances.symmetry_rel", self.tolerances.symmetry_rel)?;
        let e = &self.evolve;
        positive("evolve.horizon", e.horizon)?;
        positive("evolve.residual_tol", e.residual_tol)?;
        positive("evolve.closed_form_tol", e.closed_form_tol)?;
        positive("evolve.probe_radius", e.probe_radius)?;
        at_least_one("evolve.probes", e.probes)?;
        match e.control {
            StepControl::Fixed { steps } => at_least_one("evolve.control.steps", steps)?,
            StepControl::Halving { tol, initial_steps, .. } => {
                positive("evolve.control.tol", tol)?;
                at_least_one("evolve.control.initial_steps", initial_steps)?;
            }
        }
        for t in &self.closed_form.times {
            if !(*t >= 0.0 && t.is_finite()) {
                return Err(config_err(format!("closed_form.times entry {t} is not a valid time")));
            }
        }
        let v = &self.verify;
        for t in &v.times {
            positive("verify.times entry", *t)?;
        }
        positive("verify.semigroup_tol", v.semigroup_tol)?;
        positive("verify.recovery_h", v.recovery_h)?;
        positive("verify.recovery_tol", v.recovery_tol)?;
        positive("verify.moment_horizon", v.moment_horizon)?;
        at_least_one("verify.recovery_steps", v.recovery_steps)?;
        positive("sample.horizon", self.sample.horizon)?;
        at_least_one("sample.steps", self.sample.steps)?;
        at_least_one("sample.samples", self.sample.samples)?;
        positive("cylinder.horizon", self.cylinder.horizon)?;
        at_least_one("cylinder.steps", self.cylinder.steps)?;
        at_least_one("cylinder.samples", self.cylinder.samples)?;
        positive("fk.horizon", self.fk.horizon)?;
        at_least_one("fk.steps", self.fk.steps)?;
        at_least_one("fk.samples", self.fk.samples)?;
        positive("recover.h", self.recover.h)?;
        positive("recover.tol", self.recover.tol)?;
        at_least_one("recover.steps", self.recover.steps)?;
        Ok(())
    }

    fn matrix(&self, what: &str, spec: &Option<OperatorSpec>) -> Result<Matrix, Failure> {
        let m = match spec {
            None => Matrix::zeros(self.dim, self.dim),
            Some(s) => s.to_matrix().map_err(|e| config_err(format!("{what}: {e}")))?,
        };
        if m.nrows() != self.dim {
            return Err(config_err(format!("{what} has dimension {}, expected {}", m.nrows(), self.dim)));
        }
        Ok(m)
    }

    pub fn operators(&self) -> Result<OperatorSet, Failure> {
        if let Some(r) = &self.random_operators {
            if self.b.is_some() || self.c.is_some() || self.d.is_some() {
                return Err(config_err("random_operators excludes b, c and d"));
            }
            return random_operator_set(self.dim, r.seed, r.with_c, r.with_d).map_err(config_err);
        }
        if self.b.is_none() {
            return Err(config_err("missing operator b"));
        }
        if !self.alpha.is_finite() {
            return Err(config_err("alpha must be finite"));
        }
        let b = SymMatrix::with_tolerance(self.matrix("b", &self.b)?, "B", &self.tolerances).map_err(config_err)?;
        let c = SymMatrix::with_tolerance(self.matrix("c", &self.c)?, "C", &self.tolerances).map_err(config_err)?;
        let d = self.matrix("d", &self.d)?;
        validate_operator_set_with(b, c, d, self.alpha, &self.tolerances).map_err(config_err)
    }

    pub fn point(&self, what: &str, v: &Option<Vec<f64>>) -> Result<Vector, Failure> {
        match v {
            None => Ok(Vector::zeros(self.dim)),
            Some(v) => self.vector(what, v),
        }
    }

    pub fn vector(&self, what: &str, v: &[f64]) -> Result<Vector, Failure> {
        if v.len() != self.dim {
            return Err(config_err(format!("{what} has length {}, expected {}", v.len(), self.dim)));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(config_err(format!("{what} has a non-finite entry")));
        }
        Ok(Vector::from_column_slice(v))
    }

    fn gaussian(&self, what: &str, mean: &[f64], cov: &OperatorSpec) -> Result<GaussianMeasure, Failure> {
        let cov = self.matrix(what, &Some(cov.clone()))?;
        let cov = SymMatrix::with_tolerance(cov, "covariance", &self.tolerances).map_err(config_err)?;
        GaussianMeasure::new(self.vector(what, mean)?, cov).map_err(config_err)
    }

    pub fn initial(&self, spec: &InitialSpec) -> Result<InitialMeasure, Failure> {
        match spec {
            InitialSpec::Dirac { x } => Ok(InitialMeasure::dirac(self.vector("initial.x", x)?)),
            InitialSpec::Mixture { points, weights } => {
                let pts = points
                    .iter()
                    .map(|p| self.vector("initial.points", p))
                    .collect::<Result<Vec<_>, _>>()?;
                InitialMeasure::point_mixture(pts, weights.clone()).map_err(config_err)
            }
            InitialSpec::Gaussian { mean, cov } => {
                Ok(InitialMeasure::Gaussian(self.gaussian("initial", mean, cov)?))
            }
        }
    }

    pub fn terminal(&self, spec: &TerminalSpec) -> Result<gauss_semigroup::Terminal, Failure> {
        use gauss_semigroup::Terminal;
        match spec {
            TerminalSpec::Point { y } => Ok(Terminal::Point(self.vector("terminal.y", y)?)),
            TerminalSpec::Gaussian { mean, cov } => Ok(Terminal::Gaussian(self.gaussian("terminal", mean, cov)?)),
            TerminalSpec::Set { region } => {
                region.check_dim(self.dim).map_err(config_err)?;
                Ok(Terminal::Set(region.clone()))
            }
        }
    }

    pub fn potential(&self, spec: &PotentialSpec) -> Result<Potential, Failure> {
        match spec {
            PotentialSpec::Quadratic { cv, offset } => {
                let m = self.matrix("potential.cv", &Some(cv.clone()))?;
                let cv = SymMatrix::with_tolerance(m, "C_v", &self.tolerances).map_err(config_err)?;
                Potential::quadratic(cv, *offset).map_err(config_err)
            }
            PotentialSpec::Cosine { amplitude, wave } => {
                if !amplitude.is_finite() {
                    return Err(config_err("potential.amplitude must be finite"));
                }
                Ok(Potential::bounded_cosine(*amplitude, self.vector("potential.wave", wave)?))
            }
        }
    }
}
