use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("state matrix is singular (min singular value {min_singular:e}) and the series path is disabled")]
    SingularState { min_singular: f64 },
    #[error("transform is numerically singular (condition estimate {condition:e} exceeds {threshold:e})")]
    SingularTransform { condition: f64, threshold: f64 },
    #[error("Sylvester system has no unique solution (pivot {pivot:e})")]
    NoUniqueSolution { pivot: f64 },
    #[error("denominator 1 - a_i*a'_j = {denominator:e} at ({row}, {col}) is within {epsilon:e} of zero")]
    DivisionNearOne {
        row: usize,
        col: usize,
        denominator: f64,
        epsilon: f64,
    },
    #[error("system is not Schur-stable (spectral radius estimate {0})")]
    NotSchurStable(f64),
    #[error("Gram matrix is ill-conditioned (condition estimate {condition:e}); use the simplified distance")]
    IllConditionedGram { condition: f64 },
    #[error("observability basis is rank deficient (rank {rank} < {expected})")]
    RankDeficient { rank: usize, expected: usize },
    #[error("self-Gram trace {0:e} is degenerate")]
    DegenerateTrace(f64),
    #[error("Martin distance is infinite: a principal angle equals pi/2")]
    InfiniteDistance,
    #[error("unknown solver '{0}'")]
    UnknownSolver(String),
    #[error("unknown metric '{0}'")]
    UnknownMetric(String),
    #[error("malformed SSM document: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
