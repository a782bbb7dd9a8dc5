use thiserror::Error;

/// Crate-wide error type. The CLI maps variants onto process exit codes:
/// config errors exit 2, truncation aborts exit 3, resource-guard refusals
/// exit 4, everything else exits 1.
#[derive(Error, Debug)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    /// Probability mass reached the top of the truncated Fock basis.
    #[error("truncation breach{}: tail mass {tail:.3e} exceeds {threshold:.3e}",
            .time.map(|t| format!(" at t = {t} periods")).unwrap_or_default())]
    Truncation {
        tail: f64,
        threshold: f64,
        /// Time in drive periods, when the breach happened mid-run.
        time: Option<f64>,
    },

    /// Step size too large for the configured system (rate monitor, norm
    /// drift, or stiffness bound).
    #[error("step size fault: {0}")]
    StepSize(String),

    #[error("resource guard: {0}")]
    ResourceGuard(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Truncation { .. } => 3,
            Error::ResourceGuard(_) => 4,
            _ => 1,
        }
    }
}
