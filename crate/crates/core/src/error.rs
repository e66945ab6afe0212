use crate::mcmc::StateVector;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid density evaluation: {0}")]
    InvalidDensity(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("kernels target different distributions: {0}")]
    TargetMismatch(String),

    #[error("slice sampler: {0}")]
    Slice(String),

    #[error("infeasible moment parameters: {0}")]
    Infeasible(String),

    #[error("Newton inversion did not converge after {0} iterations")]
    NewtonFailed(usize),

    #[error("natural parameters left the natural domain: {0}")]
    OutsideDomain(String),

    #[error("divergence at t = {t}: |phi| = {norm:e}")]
    Divergence { t: usize, norm: f64, trajectory: Vec<Vec<f64>> },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("bound violated: {0}")]
    BoundViolation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("chain aborted at step {step}: {source}")]
    Chain { step: usize, partial: Vec<StateVector>, source: Box<Error> },

    #[error("{context}: {source}")]
    Context { context: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    /// Innermost error once all context layers are removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } | Error::Chain { source, .. } => source.root(),
            e => e,
        }
    }
}
