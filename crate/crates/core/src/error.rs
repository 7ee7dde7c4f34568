use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The input is geometrically degenerate (parallel rays, collinear points, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("did not converge after {iterations} iterations (worst residual {worst_residual:.3e})")]
    Convergence { iterations: usize, worst_residual: f64 },

    /// A pluggable component broke its contract (e.g. a denoiser changed shape).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }
}
