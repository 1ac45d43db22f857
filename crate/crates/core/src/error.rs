use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("vocabulary: {0}")]
    Vocabulary(String),

    #[error("alias map: {0}")]
    AliasMap(String),

    #[error("csv {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("missing label column {0:?}")]
    MissingLabelColumn(String),

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("datasets absent: {{{}}}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "))]
    DatasetsAbsent(Vec<u8>),

    #[error("tensor container: {0}")]
    Container(String),

    #[error("weights: {0}")]
    Weights(String),

    #[error("non-finite gradient at {0}")]
    NonFiniteGradient(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn stage(stage: &'static str, source: Error) -> Self {
        Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}
