use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("unknown head {head} (model has {count} heads)")]
    UnknownHead { head: usize, count: usize },

    #[error("invalid argument: {0}")]
    Usage(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{}: {message} (byte offset {offset})", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("task {task}: {source}")]
    Task { task: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn in_task(self, task: usize) -> Self {
        match self {
            e @ Error::Task { .. } => e,
            e => Error::Task {
                task,
                source: Box::new(e),
            },
        }
    }
}
