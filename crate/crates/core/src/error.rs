use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("solver failure: {reason} (after {} recorded energies)", trace.len())]
    Solver { reason: String, trace: Vec<f64> },

    #[error("A(x0) is not the identity (deviation {deviation:.3e}); apply affine normalization first")]
    NormalizationRequired { deviation: f64 },

    #[error("defect envelope is not Dini integrable; the limit of the Weiss quantity may not exist")]
    NonDini,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
