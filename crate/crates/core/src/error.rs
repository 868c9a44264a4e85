use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("box has non-finite coordinates {0:?}")]
    NonFinite([f64; 4]),
    #[error("box {0:?} has non-positive width or height")]
    Degenerate([f64; 4]),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("observation set is empty")]
    EmptyObservations,
    #[error("kernel matrix not positive definite after jitter {jitter:e}")]
    Conditioning { jitter: f64 },
    #[error("hyperparameter fit needs at least one set with two or more observations")]
    NoTrainingSets,
    #[error("invalid hyperparameter {name}: {value}")]
    InvalidHyper { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SvmError {
    #[error("feature dimension {got} does not match weight dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no training examples")]
    EmptyData,
    #[error("training needs at least one positive and one negative example")]
    MissingClass,
    #[error("hinge_{which} called on an example of the wrong polarity")]
    WrongPolarity { which: &'static str },
    #[error("invalid training configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("no features stored for image {image} box {bbox}")]
    Missing { image: String, bbox: String },
    #[error("unknown image {0}")]
    UnknownImage(String),
    #[error("feature dimension {got} does not match weight dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors from reading or writing the on-disk formats, with location.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Svm(#[from] SvmError),
}

impl DataError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }
}

/// Configuration problem, reported with the offending field path.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("config error at `{field}`: {msg}")]
pub struct ConfigError {
    pub field: String,
    pub msg: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Self { field: field.into(), msg: msg.into() }
    }
}

/// Top-level error for harness operations; the CLI maps these to exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl From<GpError> for Error {
    fn from(e: GpError) -> Self {
        Error::Data(e.into())
    }
}

impl From<SvmError> for Error {
    fn from(e: SvmError) -> Self {
        Error::Data(e.into())
    }
}

impl From<FeatureError> for Error {
    fn from(e: FeatureError) -> Self {
        Error::Data(e.into())
    }
}
