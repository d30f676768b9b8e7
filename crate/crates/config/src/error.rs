use std::fmt;

use crate::node::Loc;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{loc}: {message}")]
pub struct ParseError {
    pub message: String,
    pub loc: Loc,
}

impl ParseError {
    pub(crate) fn new(loc: Loc, message: impl fmt::Display) -> Self {
        Self {
            message: message.to_string(),
            loc,
        }
    }
}
