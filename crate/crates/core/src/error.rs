// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors raised by the laboratory.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum LabError {
    /// Two operands (or an operand and an expectation) disagree on shape.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        /// Operation that detected the mismatch.
        op: &'static str,
        /// Left-hand (or actual) shape.
        lhs: Vec<usize>,
        /// Right-hand (or expected) shape.
        rhs: Vec<usize>,
    },

    /// A NaN or infinity appeared at an op boundary.
    #[error("{op}: non-finite value produced")]
    NonFinite {
        /// Operation whose output was non-finite.
        op: &'static str,
    },

    /// An argument was outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A hook or intervention referenced an unknown site or position.
    #[error("invalid site: {0}")]
    InvalidSite(String),

    /// Input sequence longer than the model supports.
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong {
        /// Requested length.
        len: usize,
        /// Configured maximum.
        max: usize,
    },

    /// Checkpoint container is malformed.
    #[error("checkpoint format error: {0}")]
    Format(String),

    /// Checkpoint written by an unsupported format version.
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    Version {
        /// Version stored in the file.
        found: u32,
        /// Version this build reads.
        expected: u32,
    },

    /// Stored and recomputed checksums differ.
    #[error("checkpoint checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum {
        /// Checksum stored in the trailer.
        stored: u64,
        /// Checksum recomputed over the body.
        computed: u64,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged at iteration {iteration}")]
    Diverged {
        /// Iteration at which the loss became non-finite.
        iteration: usize,
        /// Parameters and optimizer state just before the failing step.
        diagnostic: Box<crate::train::Checkpoint>,
    },

    /// Cached checkpoint does not belong to the requested configuration.
    #[error("cache entry {path} was produced by a different configuration")]
    CacheMismatch {
        /// Offending cache file.
        path: PathBuf,
    },

    /// Another run holds the output directory.
    #[error("output directory {path} is locked by another run")]
    Locked {
        /// Sentinel file found in the directory.
        path: PathBuf,
    },

    /// Configuration text could not be parsed or applied.
    #[error("config error: {0}")]
    Config(String),

    /// Command-line usage error.
    #[error("usage: {0}")]
    Usage(String),

    /// Underlying I/O failure.
    #[error("I/O error on {path}: {source}")]
    Io {
        /// Path being read or written.
        path: PathBuf,
        /// Source error.
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Self::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
