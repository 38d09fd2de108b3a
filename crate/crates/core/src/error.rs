//! Error types shared across the library.

use thiserror::Error;

/// Errors produced by the numerical kernels, the model, and the data layer.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Shapes or dimensions of the operands disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An iterative numerical procedure failed to converge or produced a
    /// non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The input is outside the mathematical domain of the operation
    /// (e.g. a matrix with an eigenvalue too negative for a square root).
    #[error("domain error: {0}")]
    Domain(String),

    /// A matrix that must be invertible is singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// A configuration value is outside its allowed range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Distribution fitting was given insufficient data.
    #[error("fitting error: {0}")]
    Fit(String),

    /// Evaluation over a data set that cannot support the requested metric.
    #[error("evaluation error: {0}")]
    Eval(String),

    /// A persisted model file declares an unsupported format version.
    #[error("bundle version mismatch: found {found}, expected {expected}")]
    BundleVersion { found: u32, expected: u32 },

    /// A persisted model file could not be parsed.
    #[error("malformed bundle: {0}")]
    BundleMalformed(String),

    /// A persisted model file parsed but its arrays have inconsistent shapes.
    #[error("bundle shape inconsistency: {0}")]
    BundleShape(String),

    /// File-system failure while reading or writing an artifact.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
