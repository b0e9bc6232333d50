//! Error types shared across the crate.

use thiserror::Error;

/// Everything that can go wrong when building, running, storing, or training
/// a network.
#[derive(Error, Debug)]
pub enum SnnError {
    #[error("architecture {0:?} is invalid: need at least two layers, all sizes nonzero")]
    BadArchitecture(Vec<usize>),

    #[error("cannot parse architecture '{0}': expected dash-separated sizes like 784-800-10")]
    ArchParse(String),

    #[error("input has {got} entries but the input layer has {want} neurons")]
    InputSizeMismatch { got: usize, want: usize },

    #[error("teacher index {teacher} out of range for {outputs} output neurons")]
    TeacherOutOfRange { teacher: usize, outputs: usize },

    #[error("{what} must be finite, got {value}")]
    NonFiniteParameter { what: &'static str, value: f64 },

    #[error("invalid {what}: {problem}")]
    InvalidParameter { what: &'static str, problem: String },

    #[error("model file {path}: {problem}")]
    ModelFormat { path: String, problem: String },

    #[error("model file {path}: payload ends inside {section}")]
    ModelTruncated { path: String, section: String },

    #[error("model file {path}: {extra} trailing bytes after the last section")]
    ModelTrailingBytes { path: String, extra: usize },

    #[error("idx file {path}: bad magic {got:#010x}, expected {expected:#010x}")]
    IdxBadMagic { path: String, expected: u32, got: u32 },

    #[error("idx file {path}: {problem}")]
    IdxFormat { path: String, problem: String },

    #[error("image file lists {images} items but label file lists {labels}")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("label {value} at index {index} outside 0..=9")]
    IdxBadLabel { index: usize, value: u8 },

    #[error("config line {line}: {problem}")]
    Config { line: usize, problem: String },

    #[error("unknown config key '{0}'")]
    ConfigUnknownKey(String),

    #[error(
        "training diverged at epoch {epoch}, batch {batch}: \
         non-finite cost, max |gradient entry| so far {max_abs_gradient:e}"
    )]
    Diverged {
        epoch: usize,
        batch: usize,
        max_abs_gradient: f64,
    },

    #[error("resume state {path}: {problem}")]
    ResumeState { path: String, problem: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SnnError>;
