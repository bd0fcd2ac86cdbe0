use std::path::PathBuf;

use crate::cells::Variant;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {actual}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite input at timestep {timestep}")]
    NonFiniteInput { timestep: usize },

    #[error("empty input sequence")]
    EmptySequence,

    #[error("variant {0} has no memory cell")]
    NoMemoryCell(Variant),

    #[error("parameter block {block} is absent for variant {variant}")]
    AbsentBlock { block: String, variant: Variant },

    #[error("non-finite gradient in block {block}")]
    NonFiniteGradient { block: String },

    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error("corpus too small: need at least {required} tokens, have {actual}")]
    CorpusTooSmall { required: usize, actual: usize },

    #[error("empty corpus file {0}")]
    EmptyCorpus(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
