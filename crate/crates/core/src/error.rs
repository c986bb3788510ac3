use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("analysis failed: {0}")]
    Analysis(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("bad tag file format: {0}")]
    Format(String),

    #[error("corrupt tag file: record {index} {reason}")]
    Corruption { index: u64, reason: String },

    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("config parse error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn analysis(msg: impl Into<String>) -> Self {
        Error::Analysis(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
