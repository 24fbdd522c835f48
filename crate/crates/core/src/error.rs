use thiserror::Error;

/// Errors raised by the library.
///
/// The variants are grouped so that front ends can map them onto exit codes:
/// input problems (`Validation`, `Domain`), budget failures (`Leakage`,
/// `Tolerance`) and everything else.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("leakage {achieved:.3e} exceeds tolerance {tol:.3e}: {hint}")]
    Leakage {
        achieved: f64,
        tol: f64,
        hint: String,
    },

    #[error("tolerance failure: {0}")]
    Tolerance(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("size guard: {0}")]
    TooLarge(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Domain(_) => "domain",
            Error::Leakage { .. } => "leakage",
            Error::Tolerance(_) => "tolerance",
            Error::Numerical(_) => "numerical",
            Error::TooLarge(_) => "too_large",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
