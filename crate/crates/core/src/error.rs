use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed {field}: {detail}")]
    Malformed {
        line: usize,
        field: String,
        detail: String,
    },

    #[error("unknown region {region} in image {image_id}")]
    UnknownRegion { image_id: String, region: u32 },

    #[error("invalid image {image_id}: {detail}")]
    InvalidImage { image_id: String, detail: String },

    #[error(
        "feature length {found} does not match declared dimension {expected} (image {image_id})"
    )]
    FeatureLength {
        image_id: String,
        expected: usize,
        found: usize,
    },

    #[error("embedding file {0}: {1}")]
    Embeddings(String, String),

    #[error("degenerate distribution")]
    DegenerateDistribution,

    #[error("projection degenerate")]
    ProjectionDegenerate,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },

    #[error("vocabulary hash mismatch: {left} ({left_source}) vs {right} ({right_source})")]
    VocabMismatch {
        left: String,
        left_source: String,
        right: String,
        right_source: String,
    },

    #[error("invalid artifact: {0}")]
    Artifact(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset has no features")]
    MissingFeatures,

    #[error("nothing to evaluate: {0}")]
    EmptyEvaluation(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
