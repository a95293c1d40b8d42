use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("history query at t = {query} outside stored span [{start}, {end}]")]
    SpanUnderflow { query: f64, start: f64, end: f64 },

    #[error("Picard iteration diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("fixed-point iteration did not converge in {iterations} iterations (change {change:e})")]
    NotConverged { iterations: usize, change: f64 },

    #[error("predictor stage {stage} failed: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("dataset generation failed: {0}")]
    Generation(String),

    #[error("scenario failed: {0}")]
    Scenario(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported format version `{0}`")]
    Version(String),

    #[error("record count mismatch: manifest says {expected}, file holds {found}")]
    CountMismatch { expected: usize, found: usize },

    #[error("parameter count mismatch: manifest implies {expected}, file holds {found}")]
    ParameterCount { expected: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_stage(self, stage: usize) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
