use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("unsupported shape {0:?}: rank must be 1..=4 with positive dimensions")]
    Unsupported(Vec<usize>),
    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    DataLength { shape: Vec<usize>, expected: usize, actual: usize },
    #[error("expected a rank-{expected} tensor, got shape {actual:?}")]
    Rank { expected: usize, actual: Vec<usize> },
    #[error("{op}: expected shape {expected:?}, got {actual:?}")]
    Mismatch { op: &'static str, expected: Vec<usize>, actual: Vec<usize> },
    #[error("{op}: {dim} is {actual}, expected {expected}")]
    Dimension { op: &'static str, dim: &'static str, expected: String, actual: usize },
    #[error("index {index} out of range for leading axis of length {len}")]
    Index { index: usize, len: usize },
    #[error("cannot stack zero tensors")]
    Empty,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("layer {layer}: spatial size {height}x{width} too small for a 3x3 convolution")]
    ConvUnderflow { layer: usize, height: usize, width: usize },
    #[error("layer {layer}: spatial size {height}x{width} too small for 2x2 pooling")]
    PoolUnderflow { layer: usize, height: usize, width: usize },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("decision threshold {0} must lie strictly between 0 and 1")]
    Threshold(f64),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("label file: {0}")]
    Csv(#[from] csv::Error),
    #[error("label file is missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("label file line {line}: column `{column}` has non-binary value `{value}`")]
    NonBinary { line: u64, column: String, value: String },
    #[error("label file line {line}: expected {expected} cells, found {actual}")]
    RowLength { line: u64, expected: usize, actual: usize },
    #[error("label file line {line}: duplicate image id `{id}`")]
    DuplicateId { line: u64, id: String },
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    Ratios([f64; 3]),
    #[error("cannot split an empty id list")]
    EmptyIds,
    #[error("data part `{0}` is empty")]
    EmptyPart(String),
    #[error("batch size must be at least 1")]
    BatchSize,
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("image `{id}` not found under {dir}")]
    MissingImage { id: String, dir: PathBuf },
    #[error("could not decode image: {0}")]
    Decode(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes: not a {expected} file")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {found} (this build reads {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checksum mismatch: file is corrupt")]
    Checksum,
    #[error("file is truncated or malformed: {0}")]
    Corrupt(String),
    #[error("model config fingerprint {found:016x} does not match expected {expected:016x}")]
    Fingerprint { expected: u64, found: u64 },
    #[error("layer record `{name}` has shape {found:?}, expected {expected:?}")]
    LayerShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch} step {step}; batch ids: {ids:?}")]
    NonFiniteLoss { epoch: usize, step: usize, ids: Vec<String> },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("label {0} at index {1} is not 0 or 1")]
    NonBinaryLabel(u8, usize),
    #[error("ROC needs both classes; got {positives} positive and {negatives} negative samples")]
    SingleClass { positives: usize, negatives: usize },
    #[error("score at index {0} is not finite")]
    NonFiniteScore(usize),
}
