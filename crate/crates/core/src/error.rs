use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the detection toolkit.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    /// A file could not be decoded as a supported raster.
    #[error("ingestion error for {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },

    /// Underlying I/O failure, with the path that was being touched.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An operator or configuration parameter is out of its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The image is smaller than one 64×64 patch.
    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: u32, height: u32, min: u32 },

    /// Tensor dimensions do not match what a layer expects.
    #[error("shape error at layer {layer}: expected {expected}, got {actual}")]
    Shape {
        layer: String,
        expected: String,
        actual: String,
    },

    /// Model file carries an unknown format version.
    #[error("model format error: {0}")]
    ModelFormat(String),

    /// Model manifest shapes disagree with each other or with the blob.
    #[error("shape mismatch at layer {layer}: {detail}")]
    ModelShape { layer: String, detail: String },

    /// Model blob ends before all declared parameters were read.
    #[error("truncated model blob: expected {expected} bytes, found {actual}")]
    ModelTruncated { expected: usize, actual: usize },

    /// Dataset construction failed (empty source dir, budget too large, ...).
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    /// A score or statistic list that must be nonempty was empty.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// A structured text artifact (index, report, calibration) failed to parse.
    #[error("malformed {kind} at line {line}: {reason}")]
    Parse {
        kind: &'static str,
        line: usize,
        reason: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ingest(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Ingest {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
