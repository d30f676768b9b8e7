use std::io;
use std::path::PathBuf;

use seqex_autodiff::TensorError;
use seqex_config::{Loc, ParseError};

/// An error from resolving a config tree, located by config path and, when
/// known, the source position of the offending node.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}{}: {message}", display_path(.path), display_loc(.loc))]
pub struct ResolveError {
    pub path: String,
    pub loc: Option<Loc>,
    pub message: String,
}

fn display_path(path: &str) -> &str {
    if path.is_empty() {
        "<experiment>"
    } else {
        path
    }
}

fn display_loc(loc: &Option<Loc>) -> String {
    loc.map(|l| format!(" ({l})")).unwrap_or_default()
}

impl ResolveError {
    pub fn new(path: impl Into<String>, loc: Option<Loc>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            loc,
            message: message.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", .path.display())]
    Data {
        path: PathBuf,
        line: usize,
        message: String,
    },
    /// Invalid component construction, e.g. mismatched dimensions.
    #[error("{0}")]
    Config(String),
    /// Invalid evaluation input, e.g. mismatched corpus sizes.
    #[error("{0}")]
    Eval(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub(crate) fn config_err<T>(message: impl Into<String>) -> Result<T> {
    Err(Error::Config(message.into()))
}
