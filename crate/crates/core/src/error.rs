use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward() needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("weight normalization: slice {0} of v has zero norm")]
    ZeroNorm(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    ConfigLine {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("audio is empty")]
    EmptyAudio,

    #[error("wav: {0}")]
    Wav(String),

    #[error("mel file: {0}")]
    MelFile(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("parameter {0} has no gradient")]
    MissingGrad(String),

    #[error("non-finite {term} at step {step}")]
    NonFinite { term: &'static str, step: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
