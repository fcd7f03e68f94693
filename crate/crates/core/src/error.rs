use std::path::PathBuf;

use crate::imaging::Unit;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("band count mismatch: {what} has {found} entries, image has {expected} bands")]
    BandCountMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unit mismatch: expected {expected:?}, found {found:?}")]
    UnitMismatch { expected: Unit, found: Unit },

    #[error("invalid sensor configuration: {0}")]
    InvalidConfig(String),

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("non-finite value in input")]
    NonFinite,

    #[error("cannot super-resolve: target gsd {target} m is finer than source gsd {source_gsd} m")]
    SuperResolution { target: f64, source_gsd: f64 },

    #[error("spectrum is not Hermitian: residual imaginary energy ratio {ratio:e}")]
    NotHermitian { ratio: f64 },

    #[error("undefined AP for probe {0}: no matching gallery entries")]
    UndefinedAp(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("evaluator failed: {0}")]
    Evaluator(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, reason: impl ToString) -> Error {
        Error::Load {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
