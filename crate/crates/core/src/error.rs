use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("density not absolutely continuous; evaluate at t>0")]
    SingularDensity,

    #[error("step size underflow at t = {t:.6e}: system too stiff for the explicit integrator")]
    Stiffness { t: f64 },

    #[error("non-finite state at t = {t:.6e}: trajectory diverged")]
    Divergence { t: f64 },

    #[error("insufficient checkpoints: {0}")]
    InsufficientCheckpoints(String),

    #[error("decomposition infeasible in linear class (residual {residual:.3e})")]
    Infeasible { residual: f64 },

    #[error("lemma requires conservative field")]
    NotConservative,

    #[error("unknown {what} `{name}`; valid: {valid}")]
    Unknown {
        what: &'static str,
        name: String,
        valid: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}
