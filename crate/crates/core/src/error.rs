use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("payload size mismatch in {path}: expected {expected} bytes, found {actual}")]
    PayloadSize {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("invalid cube: {0}")]
    InvalidCube(String),

    #[error("degenerate panel: mean panel value {mean} in band {band} is not positive")]
    DegeneratePanel { band: usize, mean: f64 },

    #[error("band mask removes every band")]
    EmptyMask,

    #[error("no bands inside the {window} window ({lo}-{hi} nm)")]
    WavelengthCoverage { window: &'static str, lo: f64, hi: f64 },

    #[error("degenerate histogram: image is constant, Otsu threshold undefined")]
    DegenerateHistogram,

    #[error("boxes {first} and {second} both map to grid cell ({row}, {col})")]
    Ambiguity {
        first: usize,
        second: usize,
        row: usize,
        col: usize,
    },

    #[error("anchor error: {0}")]
    Anchor(String),

    #[error("rank error: requested {requested} components but data rank is {rank}")]
    Rank { requested: usize, rank: usize },

    #[error("degenerate simplex: {0}")]
    DegenerateSimplex(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("plot {0} has no SL pixels")]
    EmptyPlot(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` requires output of stage `{required}`; run it first")]
    Dependency { stage: String, required: String },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Csv {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code used by the CLI. Stable across releases.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Dependency { .. } => 3,
            Error::Divergence { .. } => 5,
            Error::Io { .. } => 6,
            _ => 4,
        }
    }
}
