use thiserror::Error;

/// Failures of the exact hard-sphere dynamics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("initial configuration overlaps: particles {0} and {1} closer than sigma")]
    ForbiddenInitialConfiguration(usize, usize),
    /// Two distinct collisions closer in time than the tie tolerance, or an
    /// unbounded collision sequence.
    #[error("pathological event sequence: event times {first} and {second}")]
    PathologicalEvent { first: f64, second: f64 },
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),
}

/// Errors raised by the evaluators built on top of the flow.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KineticError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("{what} = {value} exceeds the supported maximum {max}")]
    OrderCap {
        what: &'static str,
        value: usize,
        max: usize,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no plateau reached by t = {t_max}: last values {last:?}")]
    NoPlateau { t_max: f64, last: Vec<f64> },
    #[error("norm guard violated: ||F|| = {norm} >= radius {radius} ({which})")]
    NormGuard {
        norm: f64,
        radius: f64,
        which: &'static str,
    },
    #[error("distribution is not normalizable")]
    NotNormalizable,
}

pub type Result<T, E = KineticError> = std::result::Result<T, E>;
