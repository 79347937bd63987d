use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] lamp_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("provider error: {0}")]
    Provider(String),
    #[error("fixture miss for request {hash} ({summary})")]
    FixtureMiss { hash: String, summary: String },
    #[error("malformed {what} output: {raw:?}")]
    Malformed { what: &'static str, raw: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Rejected(String),
    #[error("paragraph {id}: {source}")]
    Paragraph { id: String, source: Box<Error> },
    #[error("not found: {0}")]
    NotFound(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
