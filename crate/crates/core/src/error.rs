use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Evaluation outside the domain of a kernel or distribution.
    #[error("domain error in {what}: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// A declared medium bound does not hold at a probed point.
    #[error("declared bound violated: {0}")]
    BoundViolation(String),

    #[error("quadrature did not converge on [{lo}, {hi}] (estimate {estimate:e}, error {error:e})")]
    Quadrature {
        lo: f64,
        hi: f64,
        estimate: f64,
        error: f64,
    },

    #[error("collocation table rejected: {0}")]
    Collocation(String),

    #[error("spectral solver: {0}")]
    Spectral(String),

    /// A run or self-test broke an invariant it must satisfy.
    #[error("invariant failed: {0}")]
    Invariant(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("config serialize: {0}")]
    Serialize(#[from] toml::ser::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            what,
            detail: detail.into(),
        }
    }
}
