use cmm_core::CmmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// A sweep or fit request that cannot be run as given.
    #[error("invalid `{field}`: {reason}")]
    Usage { field: &'static str, reason: String },
    #[error(transparent)]
    Core(#[from] CmmError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub(crate) fn usage(field: &'static str, reason: impl Into<String>) -> Self {
        HarnessError::Usage {
            field,
            reason: reason.into(),
        }
    }

    pub fn is_usage(&self) -> bool {
        matches!(self, HarnessError::Usage { .. })
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
