//! Error taxonomy shared by every module in the crate.
//!
//! Configuration-class errors (bad arguments, incompatible scheme/boundary
//! pairs, coefficient violations, CFL failures) are distinguished from
//! numeric-class errors (solver divergence, non-finite values) so callers
//! can map them to distinct process exit codes.

use thiserror::Error;

/// Everything that can go wrong while building or running a solver.
#[derive(Debug, Clone, Error)]
pub enum SolverError {
    /// A spatial or temporal query fell outside the problem domain.
    #[error("point ({x}, {y}) at t = {t} lies outside the domain {context}")]
    OutOfDomain {
        x: f64,
        y: f64,
        t: f64,
        context: String,
    },

    /// A coefficient sample violated one of its invariants.
    #[error("coefficient `{field}` = {value} at (x, y, t) = ({x}, {y}, {t}) violates: {constraint}")]
    Coefficient {
        field: &'static str,
        value: f64,
        x: f64,
        y: f64,
        t: f64,
        constraint: &'static str,
    },

    /// A built-in problem name did not match any registered problem.
    #[error("unknown problem `{name}`; available: {available}")]
    UnknownProblem { name: String, available: String },

    /// A function argument violated its documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A run configuration is inconsistent (scheme/boundary mismatch, CFL
    /// violation, missing exact solution, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A numeric procedure failed (divergence, non-finite intermediate).
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl SolverError {
    /// True for errors that indicate a bad setup rather than a runtime
    /// numerical breakdown.
    pub fn is_configuration(&self) -> bool {
        !matches!(self, SolverError::Numeric(_))
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SolverError>;
