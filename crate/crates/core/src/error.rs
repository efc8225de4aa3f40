use std::path::PathBuf;

use thiserror::Error;

use crate::model::ImpactClass;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no historical speed for sensor {sensor} at slot {slot}")]
    MissingHistory { sensor: String, slot: usize },

    #[error("incident {incident} has no upstream sensor coverage")]
    NoUpstreamCoverage { incident: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("incident {incident} has no log lines up to the prediction time")]
    EmptyLog { incident: String },

    #[error("feature extraction unavailable: {0}")]
    ExtractionUnavailable(String),

    #[error("could not parse extraction response: {raw:?}")]
    ExtractionParse { raw: String },

    #[error("class {0} is missing from the pool")]
    MissingClass(ImpactClass),

    #[error("class {class} has {available} usable members, {needed} required")]
    InsufficientClass {
        class: ImpactClass,
        needed: usize,
        available: usize,
    },

    #[error("provider {provider} unavailable after {attempts} attempts: {message}")]
    ProviderUnavailable {
        provider: String,
        attempts: u32,
        message: String,
    },

    #[error("unparseable model response: {raw:?}")]
    UnparseableResponse { raw: String },

    #[error("missing credential: environment variable {var} is not set")]
    MissingCredential { var: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training-only stage `{stage}` received test incident {incident}")]
    Leakage { stage: String, incident: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

/// Tag errors with the pipeline stage they came from.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        })
    }
}
