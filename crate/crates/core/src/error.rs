use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("unknown unit `{0}`")]
    UnknownUnit(String),

    #[error("graph construction error: {0}")]
    Graph(String),

    #[error("memory conflict: key `{key}` already committed in {store}")]
    Conflict { store: &'static str, key: String },

    #[error("ordering violation: {0}")]
    OrderingViolation(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("verifier error: {0}")]
    Verifier(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
