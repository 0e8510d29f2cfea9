use thiserror::Error;

#[derive(Debug, Error)]
pub enum SwirlError {
    #[error("invalid world spec: {0}")]
    InvalidWorld(String),
    #[error("invalid action prior: {0}")]
    InvalidPrior(String),
    #[error("{what} index {index} out of range (must be < {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("configuration error at line {line}: {message}")]
    ConfigLine { line: usize, message: String },
    #[error("transition ({x}, {y}) has zero probability under every action")]
    ZeroEvidence { x: usize, y: usize },
    #[error("state {0} has no prior (absent from the dataset)")]
    MissingPrior(usize),
    #[error("instance has {entries} table entries, limit is {limit}")]
    InstanceTooLarge { entries: usize, limit: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("model is frozen and cannot be updated")]
    FrozenModel,
    #[error("kl_coeff > 0 requires a reference policy")]
    MissingReference,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SwirlError {
    /// True for errors caused by invalid user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SwirlError::InvalidWorld(_)
                | SwirlError::InvalidPrior(_)
                | SwirlError::InvalidConfig(_)
                | SwirlError::ConfigLine { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, SwirlError>;
