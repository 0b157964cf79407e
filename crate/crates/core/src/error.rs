use std::path::PathBuf;

use cicd_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown preset `{0}` (expected snopes2, politifact3, fever3 or synthetic)")]
    UnknownPreset(String),
    #[error("config field `{field}`: {reason}")]
    Constraint { field: &'static str, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label index {label} out of range for {n_classes} classes")]
    UnknownLabel { label: usize, n_classes: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing or empty field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: unknown label `{label}`")]
    UnknownLabelName { line: usize, label: String },
    #[error("invalid synthetic parameters: {0}")]
    InvalidParams(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("global evidence width {global} differs from local evidence width {local}; enable projection mode or set o = 2k")]
    WidthMismatch { global: usize, local: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after last parameter")]
    TrailingBytes(usize),
    #[error("checkpoint metadata: {0}")]
    Meta(String),
    #[error("parameter `{name}`: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint lacks parameter `{0}`")]
    MissingParam(String),
    #[error("checkpoint has unexpected parameter `{0}`")]
    UnexpectedParam(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
