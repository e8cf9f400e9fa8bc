use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scan file has {rows} rows but geometry {n1}x{n2} needs {expected}")]
    GeometryMismatch {
        rows: usize,
        n1: usize,
        n2: usize,
        expected: usize,
    },
    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("spectrum of scan {scan} has non-increasing m/z at {mz}")]
    UnsortedSpectrum { scan: usize, mz: f64 },
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("log-likelihood is not finite")]
    NonFiniteLoglik,
    #[error("optimizer diverged: {0}")]
    OptimizerDiverged(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("region of length {len} cannot host {s} component(s) of this family (needs {needed} points)")]
    InfeasibleRegion { len: usize, s: usize, needed: usize },
    #[error("no feasible fit")]
    NoFeasibleFit,
    #[error("spectrum has no nonzero intensity")]
    EmptySpectrum,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
