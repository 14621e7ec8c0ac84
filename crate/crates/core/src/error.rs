use thiserror::Error;

pub type Result<T> = std::result::Result<T, CmmError>;

#[derive(Debug, Error)]
pub enum CmmError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("empty support row {row}: every entry is -inf")]
    EmptySupportRow { row: usize },

    #[error("singular state matrix: eigenvalue {index} is zero")]
    Singularity { index: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A failure inside one stage of a composed forward pass.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CmmError>,
    },

    #[error("bundle format error: {0}")]
    Format(String),

    #[error("bundle payload truncated inside tensor `{tensor}`")]
    Corruption { tensor: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CmmError {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        CmmError::Shape { op, left, right }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        CmmError::Parameter(msg.into())
    }
}

/// Tags an error with the forward-pass stage it came from.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| CmmError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
