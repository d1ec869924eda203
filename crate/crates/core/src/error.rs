use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Distribution or configuration parameters violate an invariant.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Adaptive quadrature ran out of refinements. `estimate` is the last value reached.
    #[error("{what}: quadrature did not reach tolerance (estimate {estimate:e})")]
    NumericalTolerance { what: &'static str, estimate: f64 },

    #[error("frequency grid captures only {captured:.4} of the spectral mass (need {required})")]
    Coverage { captured: f64, required: f64 },

    /// Gaussian fit failed; `fallback_width` is the raw r.m.s. width from the second moment.
    #[error("gaussian fit failed ({reason}); raw r.m.s. width {fallback_width:.6}")]
    GaussianFit { reason: String, fallback_width: f64 },

    #[error("window acceptance rate {rate:e} is below {min:e}")]
    WindowTooNarrow { rate: f64, min: f64 },

    #[error("{0}")]
    Initialization(String),

    #[error("{what} did not converge: {detail}")]
    Convergence { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 2 validation, 3 numerical convergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParams(_)
            | Error::InvalidInput(_)
            | Error::Coverage { .. }
            | Error::WindowTooNarrow { .. }
            | Error::Json(_) => 2,
            Error::NumericalTolerance { .. }
            | Error::GaussianFit { .. }
            | Error::Initialization(_)
            | Error::Convergence { .. } => 3,
            Error::Io(_) | Error::Csv(_) => 4,
        }
    }

    pub(crate) fn params(msg: impl Into<String>) -> Self {
        Error::InvalidParams(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
