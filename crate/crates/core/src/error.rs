use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rational polynomial denominator vanished (|den| = {value:e})")]
    DegenerateDenominator { value: f64 },

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("ill-conditioned system (condition {condition:e} exceeds {limit:e})")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("insufficient samples: got {got} {what}, need {need}")]
    InsufficientSamples { what: &'static str, got: usize, need: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate footprint")]
    EmptyFootprint,

    #[error("matching window at ({row:.1}, {col:.1}) does not fit in the raster")]
    WindowOutOfBounds { row: f64, col: f64 },

    #[error("descriptor configurations differ")]
    ConfigMismatch,

    #[error("point block of track {track} is singular (condition {condition:e})")]
    SingularPointBlock { track: usize, condition: f64 },

    #[error("reduced normal matrix is rank deficient")]
    RankDeficient,

    #[error("triangulation of track {track} failed: {reason}")]
    TriangulationFailed { track: usize, reason: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures of the numerical machinery, as opposed to bad input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateDenominator { .. }
                | Error::NoConvergence(_)
                | Error::IllConditioned { .. }
                | Error::SingularPointBlock { .. }
                | Error::RankDeficient
                | Error::TriangulationFailed { .. }
        )
    }
}
