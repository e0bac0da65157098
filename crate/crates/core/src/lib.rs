//! Finite-dimensional Gaussian semigroups for the Euclidean Schrödinger
//! measure equation
//! `mu' = 1/2 tr(B mu'') - div(D x mu) - 1/2 (C x, x) mu + alpha mu`.
//!
//! The solution kernel `G_x(t)` is the Gaussian
//! `s(t) exp(-1/2 (P(t) x, x)) N(R(t) x, Q(t))`, whose parameters solve a
//! Riccati system ([`riccati`]). Kernels compose in closed form
//! ([`kernel::compose`]), sample paths of the `alpha = 0` process are drawn
//! from exact Gaussian transitions ([`paths`]), and potentials are handled by
//! Feynman-Kac path integrals ([`fk`]).

/// Library version, recorded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod error;
pub mod fk;
pub mod kernel;
pub mod mc;
pub mod operators;
pub mod paths;
pub mod riccati;
pub mod stats;

pub use error::{Error, Result};
pub use mc::random_operator_set;
pub use fk::{
    fk_evolve, fk_kernel_mass, path_integral_weight, validate_potential, FkEstimate, FkOptions,
    Growth, Potential, PotentialKind, PotentialReport, TestFunction,
};
pub use kernel::{
    apply_to_initial, characteristic_functional, compose, density, EvolvedMeasure, GaussianKernel,
    GaussianMeasure, InitialMeasure, KernelRecord, WeightedGaussian,
};
pub use operators::{
    conjugated_integral, even_sqrt_function, matrix_exponential, validate_operator_set,
    validate_operator_set_with, EvenFn, Matrix, OperatorSet, OperatorSpec, SymMatrix, Tolerances,
    Vector,
};
pub use paths::{
    condition_endpoint, cylinder_mass, gaussianity_check, sample_paths, sample_paths_with,
    ConditionedEnsemble, Constraint, CylinderEstimate, CylinderSpec, GaussianityReport,
    LinearFunctional, PathEnsemble, PathSample, PathSampler, Region, Terminal, TimeGrid,
};
pub use riccati::{
    closed_form_c0, closed_form_d0, integrate, pde_residual_fourier, recover_generators,
    residual_report, rhs, state_at, EvolutionState, StepControl, Trajectory,
};
