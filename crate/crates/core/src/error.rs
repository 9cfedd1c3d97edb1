use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: timestamp {timestamp} is not after the previous record")]
    NonMonotone { line: usize, timestamp: String },

    #[error("tables overlap in time: {0}")]
    Overlap(String),

    #[error("http request to {url} failed ({status:?}): {message}")]
    Http {
        url: String,
        status: Option<u16>,
        message: String,
        retryable: bool,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("feature {0} has no valid values")]
    AllMissing(String),

    #[error("feature {0} is constant over the fitting range")]
    ConstantFeature(String),

    #[error("unknown feature {0}")]
    UnknownFeature(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("zero denominator at indices {0:?}")]
    ZeroDenominator(Vec<usize>),

    #[error("zero variance in {0}")]
    ZeroVariance(String),

    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss} (lr {lr}, batch size {batch_size})")]
    NanLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
        lr: f64,
        batch_size: usize,
    },

    #[error("backward called before a forward pass was recorded")]
    NoForward,

    #[error("missing checkpoint at {0}")]
    MissingCheckpoint(PathBuf),

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an error with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Http { retryable: true, .. })
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
