use thiserror::Error;

/// Errors raised while building designs, evaluating criteria or running studies.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid design space [{lower}, {upper}]: need finite lower < upper")]
    InvalidDesignSpace { lower: f64, upper: f64 },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("degenerate design: all mass was dropped")]
    DegenerateDesign,

    #[error("cannot round a {k}-point design to n = {n} observations")]
    RoundingTooFew { n: usize, k: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("{kind} mean is undefined at x = {x} (nonpositive denominator or log argument)")]
    Domain { kind: &'static str, x: f64 },

    #[error("target not attained: no dose in [{lower}, {upper}] reaches the requested fraction")]
    TargetNotAttained { lower: f64, upper: f64 },

    #[error("non-regular target at x = {x}: mean has zero slope at the effective dose")]
    NonRegularTarget { x: f64 },

    #[error("non-finite integrand value {value} at quadrature node y = {node}")]
    NonFiniteIntegrand { node: f64, value: f64 },

    #[error("singular information matrix for candidate {candidate} ({which}, rcond = {rcond:e})")]
    Singular {
        candidate: String,
        which: &'static str,
        rcond: f64,
    },

    #[error("projection of truth onto candidate {candidate} did not converge (gradient norm {gradient_norm:e})")]
    ProjectionFailed { candidate: String, gradient_norm: f64 },

    #[error("prior atom {index} ({label}): {source}")]
    Atom {
        index: usize,
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
