//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants are grouped by the
//! failure class they describe so callers (in particular the CLI) can map
//! them to exit codes without string matching.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- I/O and file formats -------------------------------------------
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("no samples found under {0}")]
    NoSamples(PathBuf),

    #[error("bad container format: {0}")]
    Format(String),

    #[error("container version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated container: wanted {wanted} bytes, got {got}")]
    Truncated { wanted: usize, got: usize },

    #[error("checkpoint holds a {found}, expected a {expected}")]
    WrongKind { found: String, expected: String },

    // ---- validation ------------------------------------------------------
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("label {label} out of range for {class_count} classes")]
    LabelOutOfRange { label: i64, class_count: usize },

    #[error("intensity {value} outside [0,1] at sample {index}")]
    IntensityOutOfRange { value: f64, index: usize },

    #[error("fraction must lie in (0,1), got {0}")]
    InvalidFraction(f64),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dataset contains only target-class samples")]
    OnlyTargetClass,

    #[error("unknown trigger kind `{0}`")]
    UnknownTriggerKind(String),

    #[error("trigger budget violated: {0}")]
    BudgetViolated(String),

    #[error("config error: {0}")]
    Config(String),

    // ---- numerics --------------------------------------------------------
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("training diverged (loss not finite) at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("synthesis produced NaN for class {class} at iteration {iteration}")]
    SynthesisNan { class: usize, iteration: usize },

    #[error("gamma-function overflow for p = {p}")]
    GammaOverflow { p: usize },

    // ---- module-specific gates ------------------------------------------
    #[error("trigger detector below accuracy gate: held-out accuracy {accuracy:.4} < {gate:.4}")]
    DetectorGate { accuracy: f64, gate: f64 },

    #[error("discriminator enumeration too large ({size} candidates > cap {cap}); coarsen the value grid")]
    EnumerationCap { size: u128, cap: u128 },

    #[error("distribution weights sum to {0}, expected 1")]
    WeightSum(f64),

    #[error("discriminator missing a value on support point {0}")]
    MissingSupportValue(usize),

    #[error("zero base latent in norm probe")]
    ZeroLatent,

    #[error("latent dimension mismatch: expected {expected}, got {got}")]
    LatentDim { expected: usize, got: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit-code class used by the command line front end:
    /// 2 = config/validation, 3 = numerical failure, 4 = missing artifact.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingArtifact(_) => 4,
            Error::NonFinite { .. }
            | Error::Divergence { .. }
            | Error::SynthesisNan { .. }
            | Error::GammaOverflow { .. } => 3,
            _ => 2,
        }
    }
}
