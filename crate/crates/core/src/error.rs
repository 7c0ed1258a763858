use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    /// Relative error requested against a target with zero norm.
    #[error("degenerate target: reference vector has zero norm")]
    DegenerateTarget,

    #[error("solver diverged for {equation} at t = {time:.6e}")]
    SolverDivergence { equation: String, time: f64 },

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
