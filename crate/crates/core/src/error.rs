use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coefficient a^s = {value:e} is not positive at x = {x:?}")]
    NonPositiveCoefficient { x: Vec<f64>, value: f64 },

    #[error("Cholesky factorization failed at pivot {pivot} (value {value:e}); matrix is not positive definite")]
    Factorization { pivot: usize, value: f64 },

    #[error("eigensolver did not converge in {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("integrand failed at point k = {k}, shift r = {r}: {source}")]
    Integrand {
        k: usize,
        r: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("level {ell} failed at y = {y:?}: {source}")]
    Level {
        ell: usize,
        y: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("budget exceeded: {reason}")]
    BudgetExceeded {
        reason: String,
        partial: Option<Box<crate::mlqmc::MLEstimate>>,
    },

    /// A level failed during a fixed-allocation run; `partial` holds the levels
    /// completed before it.
    #[error("level {ell} of the multilevel estimate failed: {source}")]
    LevelFailed {
        ell: usize,
        partial: Box<crate::mlqmc::MLEstimate>,
        #[source]
        source: Box<Error>,
    },

    #[error("oracle size guard: {0}")]
    Guard(String),

    #[error("malformed generating vector file: {0}")]
    VectorFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures that originate in the eigensolver or its factorization,
    /// including ones wrapped by the integrand and level contexts.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::Factorization { .. }
            | Error::NoConvergence { .. }
            | Error::NonPositiveCoefficient { .. } => true,
            Error::Integrand { source, .. }
            | Error::Level { source, .. }
            | Error::LevelFailed { source, .. } => {
                source.is_solver_failure()
            }
            _ => false,
        }
    }
}
