use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("duplicate input bit string {0}")]
    DuplicateInput(String),

    #[error("{what} of size {size} exceeds the supported limit {limit}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("logical model does not have the requested strings as its degenerate ground states")]
    NotVerified,

    #[error("ground strings are not degenerate under H_0 (energies {0:?})")]
    NotDegenerate(Vec<f64>),

    #[error("ground strings are not the ground states of H_0 at constraint strengths {0:?}")]
    Inadmissible(Vec<f64>),

    #[error("eigensolver did not converge (residual {residual:e})")]
    SolverFailure { residual: f64 },

    #[error(
        "vanishing excitation energy {energy:e} for constraint strengths {strengths:?}; \
         perturbation theory breaks down"
    )]
    SingularDenominator { strengths: Vec<f64>, energy: f64 },

    #[error("effective expansion diverges at t = {0}")]
    DivergentExpansion(f64),

    #[error("ill-conditioned subspace overlap: {0}")]
    IllConditioned(String),

    #[error("need at least two ground states to form a transition")]
    NoPairs,

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("integrator failure: {0}")]
    IntegratorFailure(String),

    #[error("invalid targets: {0}")]
    InvalidTargets(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("unsupported schedule: {0}")]
    UnsupportedSchedule(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
