//! Error types shared across the library.
//!
//! Every fallible operation returns [`Result`]. Variants are grouped by the
//! stage that raises them: tensor/shape plumbing, network construction and
//! execution, optimization, data ingestion and preparation, and the
//! adaptation contract. Callers that need to map failures onto process exit
//! codes can use [`Error::category`].

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by binaries to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Caller passed an invalid configuration or argument.
    Usage,
    /// Input data is missing, malformed, or inconsistent.
    Data,
    /// A guarantee the library promises was about to be broken.
    Contract,
    /// Anything else (numerical failure, internal invariant).
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // ---- tensors and shapes -------------------------------------------------
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: String,
        expected: String,
        actual: String,
    },

    #[error("cannot reshape {len} elements into {shape:?}")]
    BadReshape { len: usize, shape: Vec<usize> },

    // ---- network construction and execution --------------------------------
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("batch of size 1 cannot pass through batch normalization in train mode")]
    DegenerateBatch,

    #[error("backward called without a preceding train-mode forward")]
    BackwardWithoutForward,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("row {row} of the teacher distribution sums to {sum:.6}, not 1")]
    NotADistribution { row: usize, sum: f64 },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    // ---- configuration ------------------------------------------------------
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // ---- data ingestion -----------------------------------------------------
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: no usable rows ({detail})")]
    EmptyData { path: PathBuf, detail: String },

    #[error("{path}: missing required column '{column}'")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: duplicate timestamp {timestamp}")]
    DuplicateTimestamp { path: PathBuf, timestamp: String },

    #[error("{path}: non-uniform timestamp spacing: {found} at {timestamp} (expected {expected})")]
    NonUniformSpacing {
        path: PathBuf,
        expected: String,
        found: String,
        timestamp: String,
    },

    #[error("series do not align: {0}")]
    Misaligned(String),

    // ---- data preparation ---------------------------------------------------
    #[error("target interval {to_minutes} min is not a multiple of the base interval {from_minutes} min")]
    BadResampleInterval { from_minutes: u32, to_minutes: u32 },

    #[error(
        "only {distinct} distinct positive power values for {bins} bins; \
         quantile edges would collide (consider the equal-width scheme)"
    )]
    TooFewDistinct { distinct: usize, bins: usize },

    #[error("dataset with {n} samples is too small to split into train/val/test")]
    TooSmallToSplit { n: usize },

    #[error("split fractions sum to {sum:.6}, expected 1")]
    BadSplitFractions { sum: f64 },

    #[error("{context}: no samples")]
    EmptySelection { context: String },

    #[error("training data contains a single class; nothing to learn")]
    SingleClass,

    #[error("annotation mask missing: run the annotation step before adapting")]
    MaskMissing,

    #[error("{context}: unlabeled samples present")]
    UnlabeledSamples { context: String },

    // ---- adaptation contract ------------------------------------------------
    #[error("source-free contract violated: {0}")]
    SourceFree(String),
}

impl Error {
    /// The coarse class this error belongs to.
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            InvalidConfig(_) | BadSplitFractions { .. } => ErrorCategory::Usage,
            Io { .. }
            | EmptyData { .. }
            | MissingColumn { .. }
            | DuplicateTimestamp { .. }
            | NonUniformSpacing { .. }
            | Misaligned(_)
            | BadResampleInterval { .. }
            | TooFewDistinct { .. }
            | TooSmallToSplit { .. }
            | EmptySelection { .. }
            | SingleClass
            | MaskMissing
            | UnlabeledSamples { .. } => ErrorCategory::Data,
            SourceFree(_) => ErrorCategory::Contract,
            _ => ErrorCategory::Internal,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_partition_the_variants() {
        assert_eq!(
            Error::InvalidConfig("x".into()).category(),
            ErrorCategory::Usage
        );
        assert_eq!(Error::SingleClass.category(), ErrorCategory::Data);
        assert_eq!(
            Error::SourceFree("read source rows".into()).category(),
            ErrorCategory::Contract
        );
        assert_eq!(Error::DegenerateBatch.category(), ErrorCategory::Internal);
    }

    #[test]
    fn messages_name_the_offending_input() {
        let err = Error::MissingColumn {
            path: PathBuf::from("weather.csv"),
            column: "ghi".into(),
        };
        let msg = err.to_string();
        assert!(msg.contains("weather.csv"));
        assert!(msg.contains("ghi"));
    }
}
