use std::path::PathBuf;

use crate::numerics::{DType, Precision};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("accumulation precision {accum} is narrower than operand dtype {dtype}")]
    AccumTooNarrow { accum: Precision, dtype: DType },

    #[error("bit index {bit} out of range for {dtype} ({width}-bit encoding)")]
    BitOutOfRange { bit: u32, dtype: DType, width: u32 },

    #[error("value {value} is not representable as {dtype}")]
    NotRepresentable { value: f64, dtype: DType },

    #[error("empty matrix")]
    EmptyMatrix,

    #[error("integer overflow: {0}")]
    IntegerOverflow(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // weight container
    #[error("bad magic")]
    BadMagic,

    #[error("unsupported container version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated payload in tensor `{tensor}`")]
    Truncated { tensor: String },

    #[error("dimension overflow in tensor `{tensor}`")]
    DimOverflow { tensor: String },

    #[error("tensor `{0}` missing from container")]
    MissingTensor(String),

    #[error("tensor `{tensor}`: {reason}")]
    TensorMismatch { tensor: String, reason: String },

    // profiling
    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("golden set is empty: the model classifies no sample of the dataset correctly")]
    EmptyGoldenSet,

    // injection
    #[error("layer {layer}: no in-range corruption found after {attempts} attempts")]
    RetryBudgetExhausted { layer: usize, attempts: u32 },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    // analysis
    #[error("no injection records for layer {layer}")]
    NoRecords { layer: usize },

    #[error("negative cost for layer {layer}")]
    NegativeCost { layer: usize },

    #[error("target coverage {target} unreachable (all layers give {reachable})")]
    TargetUnreachable { target: f64, reachable: f64 },

    // guard
    #[error("layer {layer}: {n} calibration samples, at least {min} required")]
    InsufficientSamples { layer: usize, n: usize, min: usize },

    #[error("layer {layer}: zero spread with nonzero discrepancy {value} (checksum precision saturated)")]
    PrecisionSaturation { layer: usize, value: f64 },

    #[error("no epsilon model for floating-point layer {layer}")]
    MissingEpsilon { layer: usize },

    #[error("no weight checksum for protected layer {layer}")]
    MissingChecksum { layer: usize },

    #[error("layer {layer}: still failing verification after {attempts} replays (persistent fault suspected)")]
    ReplayBudgetExhausted { layer: usize, attempts: u32 },

    #[error("layer {layer}: no target for {policy} skip")]
    SkipTargetMissing { layer: usize, policy: String },

    // front-end
    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` requires `{requires}` to run first (missing {path})")]
    StageDependency {
        stage: String,
        requires: String,
        path: PathBuf,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
