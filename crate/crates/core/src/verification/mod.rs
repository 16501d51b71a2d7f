//! Assumption checker, bound evaluators, solution certificate and the
//! self-convergence harness.

mod assumptions;
mod bounds;
mod certificate;
mod convergence;
pub mod sampling;

use thiserror::Error;

use crate::discretization::{AssemblyError, GridError};
use crate::solver::SolverError;

pub use assumptions::{check_assumptions, AssumptionRecord, AssumptionReport, SamplePoint, MARGIN_TOL};
pub use bounds::{bound_functions, BoundConfig, BoundError, BoundFunctions, HValue};
pub use certificate::{
    certify, mfg_residual, CertificateReport, CertifyOptions, DensityIntervalCheck, EllipticityCheck, MassCheck,
    MfgResidual, ObliquenessCheck, PositivityCheck, ResidualCheck, TimeDerivativeDiagnostic, UBoundsCheck,
};
pub use convergence::{self_convergence, ConvergenceReport, GridSummary, Order, EXACT_THRESHOLD};
pub use sampling::SampleBox;

#[derive(Debug, Error)]
pub enum VerificationError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error("{0}")]
    Input(String),
}
