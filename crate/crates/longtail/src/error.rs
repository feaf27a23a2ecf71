use std::path::PathBuf;

/// Crate-wide error type.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    // ---- stain normalization ----
    #[error("stain separation failed: optical-density cloud is rank-deficient")]
    DegenerateStains,
    #[error("too few tissue pixels above the OD threshold: {found} (need at least {needed})")]
    TooFewPixels { found: usize, needed: usize },
    #[error("stain matrix is singular (normal-matrix determinant {det:e})")]
    SingularStainMatrix { det: f64 },
    #[error("invalid stain matrix: {0}")]
    InvalidStainMatrix(String),

    // ---- indices / shapes ----
    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("dimension mismatch: expected {expected}, got {actual} for {what}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("length mismatch: {left} predictions vs {right} truths")]
    LengthMismatch { left: usize, right: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    // ---- datasets / sampling ----
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("class {class} has no samples")]
    EmptyClass { class: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,

    // ---- training / inference ----
    #[error("invalid cosine schedule: t={t} exceeds total epochs T={total}")]
    InvalidSchedule { t: usize, total: usize },
    #[error("model has no stage-1 training; pass allow_untrained to override")]
    MissingStage1,
    #[error("unsupported TTA view count k={0} (fixed view set supports 1..=8)")]
    UnsupportedK(usize),
    #[error("models disagree: {0}")]
    ModelMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // ---- files / parsing ----
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unknown label {label:?} at {path}:{line}")]
    UnknownLabel {
        label: String,
        path: PathBuf,
        line: usize,
    },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("invalid checkpoint {path}: {message}")]
    InvalidCheckpoint { path: PathBuf, message: String },
    #[error("image error: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
