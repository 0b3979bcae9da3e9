//! Solver and verification harness for the viscous Cahn–Hilliard tumor
//! growth system and its non-viscous limit `α, β → 0`.
//!
//! The unknowns are the chemical potential `μ`, the phase field `φ` and the
//! nutrient concentration `σ` on a box with homogeneous Neumann conditions.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod potentials;
pub mod stepper;
pub mod study;
pub mod verify;

pub use diagnostics::{error_norms, fit_rate, uniform_bound_report, ErrorReport, NormAccumulator, RateReport, UniformBoundMonitor, UniformBoundReport};
pub use error::{Error, Result};
pub use grid::{Field, Grid, NormTriple, RieszSolver};
pub use model::{InitialShape, ModelParams, MuInit, State};
pub use potentials::{Coupling, PotentialKind, PotentialSpec};
pub use stepper::{integrate, step, LinearSolverKind, SolveConfig, StepReport, Trajectory};
pub use config::{Command, StudyConfig};
pub use study::{run_single, run_study, RunSummary, StudyOutcome};
pub use verify::{run_verify, SuiteResult, VerifyOptions};
