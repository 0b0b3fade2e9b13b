use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong inside the grounding pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Savitzky-Golay parameters: {0}")]
    Kernel(String),

    #[error("invalid label request: {0}")]
    Labels(String),

    #[error("shape mismatch: expected {expected}, got {actual} ({context})")]
    Shape {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("zero-norm embedding: {0}")]
    ZeroNorm(&'static str),

    #[error("non-positive score {score} at frame {frame}; apply a squash stage before the matching loss")]
    NonPositiveScore { frame: usize, score: f64 },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("non-finite value {value} at {context}")]
    NonFinite { value: f64, context: String },

    #[error("empty segment set")]
    EmptySegmentSet,

    #[error("invalid segment set: {0}")]
    SegmentSet(String),

    #[error("metric precondition failed: {0}")]
    Metric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Dataset {
        path: String,
        line: usize,
        message: String,
    },

    #[error("feature file {path}: {message}")]
    FeatureFile { path: PathBuf, message: String },

    #[error("query {query_id}: {source}")]
    Query {
        query_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_query(self, query_id: &str) -> Self {
        Error::Query {
            query_id: query_id.to_owned(),
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics (divergence, non-finite values),
    /// as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Divergence { .. } | Error::NonFinite { .. } | Error::NonPositiveScore { .. } => {
                true
            }
            Error::Query { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
