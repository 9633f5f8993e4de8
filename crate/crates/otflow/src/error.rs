//! Crate-wide error type.
//!
//! Every fallible operation in the solver reports one of these variants;
//! the CLI maps them onto process exit codes (see `bin/otflow.rs`).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A point coincides (to roundoff) with the projection pole of the
    /// requested stereographic chart, where chart coordinates blow up.
    #[error("point is at the projection pole of chart {chart}")]
    PoleSingular { chart: &'static str },

    /// `exp_map` was handed a vector that is not tangent to the sphere
    /// at the base point.
    #[error("vector is not tangent to the sphere at the base point (inner product {inner:.3e})")]
    TangencyViolation { inner: f64 },

    /// An overlap ghost point could not be filled because its donor
    /// stencil is not fully contained in the other chart's computed region.
    #[error("overlap interpolation stencil leaves the donor chart's computed region (grid too coarse, n = {n})")]
    OverlapStarved { n: usize },

    /// The cost function was evaluated at or beyond its singular locus.
    #[error("cost evaluated too close to its singularity (separation {separation:.3e})")]
    SingularPair { separation: f64 },

    /// The mixed second derivative matrix `c_{i sbar}` is numerically
    /// singular, so the contact relation cannot be differentiated.
    #[error("mixed cost Hessian is near-singular (|det| = {det:.3e})")]
    NearDegenerateMixedHessian { det: f64 },

    /// A geodesic computation hit the cut locus where it is not smooth.
    #[error("computation reached the cut locus")]
    CutLocusReached,

    /// The contact-relation Newton solve failed to converge.
    #[error("Newton solve for the target point diverged ({iters} iterations, residual {residual:.3e})")]
    NewtonDiverged { iters: usize, residual: f64 },

    /// The Jacobian of the contact relation collapsed during the solve.
    #[error("contact-relation Jacobian is singular (|det| = {det:.3e})")]
    SingularJacobian { det: f64 },

    /// The flow left the locally convex regime: `w = D^2 u + A` is no
    /// longer positive definite at some grid point.
    #[error("w lost positive-definiteness (minimum eigenvalue {eig_min:.3e} at chart {chart} node {node})")]
    NonConvexState {
        chart: &'static str,
        node: usize,
        eig_min: f64,
    },

    /// A flow step failed even after exhausting the time-step backtracking.
    #[error("time step failed after {halvings} halvings: {source}")]
    StepFailed {
        halvings: usize,
        #[source]
        source: Box<Error>,
    },

    /// The flow hit the step budget before the oscillation tolerance.
    #[error("flow did not converge within {max_steps} steps (H = {h:.3e}, tolerance {tol:.3e})")]
    NonConvergence { max_steps: u64, h: f64, tol: f64 },

    /// A diagnostic had too few samples to produce a meaningful answer.
    #[error("not enough data for {what} ({have} samples, need {need})")]
    InsufficientData {
        what: &'static str,
        have: usize,
        need: usize,
    },

    /// A run configuration is malformed or out of range.
    #[error("config error in `{field}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    ConfigError {
        field: String,
        line: Option<usize>,
        message: String,
    },

    /// Filesystem or serialization failure while reading/writing run outputs.
    #[error("i/o error on {path}: {message}")]
    IoError { path: String, message: String },
}

impl Error {
    /// Convenience constructor for config errors.
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigError {
            field: field.into(),
            line: None,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Error::IoError {
            path: path.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
