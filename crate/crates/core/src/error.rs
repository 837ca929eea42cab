use thiserror::Error;

/// Errors shared by the solver, the stochastic substrate and the checkers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("solver diverged at step {step} (t = {time}): {detail}")]
    SolverDiverged {
        step: usize,
        time: f64,
        detail: String,
    },

    #[error("instability: {0}")]
    Instability(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
