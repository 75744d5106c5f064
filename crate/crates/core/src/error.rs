//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by construction, solvers, estimators and I/O.
#[derive(Debug, Error)]
pub enum MdiError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("feature map undefined at atom {atom:?}: {reason}")]
    Evaluation { atom: Vec<f64>, reason: String },

    #[error("Slater condition violated: moment margin to the boundary of E is {margin:e} (must be > 0)")]
    SlaterViolation { margin: f64 },

    #[error("degenerate moment set: {0}")]
    DegenerateSet(String),

    #[error(
        "Slater point coincides with the base distribution (C = 0): the base moment already lies in E, \
         call solve() which returns the base unchanged"
    )]
    AlreadyFeasible,

    #[error("no Slater point found: {0}; supply explicit Slater weights or enlarge E")]
    NoSlater(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("solver diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error(
        "feasibility certificate violated after {iterations} iterations: gap {gap:e} exceeds bound {bound:e}"
    )]
    CertificateViolation {
        gap: f64,
        bound: f64,
        iterations: usize,
    },

    #[error("rejection sampler accepted no trials; use a smaller N or a wider E")]
    NoAcceptance,

    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("cost function is not invertible on the observed pairs: {0}")]
    NotInvertible(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MdiError>;

pub(crate) fn invalid(msg: impl Into<String>) -> MdiError {
    MdiError::InvalidInput(msg.into())
}
