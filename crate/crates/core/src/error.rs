use thiserror::Error;

/// Errors raised while reading the text formats (dictionary, whitelist,
/// mapping, rules, app categories, JSONL records).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("unknown motive {0:?}")]
    UnknownMotive(String),
    #[error("field {0:?} must not be empty")]
    EmptyField(&'static str),
    #[error("duplicate key {0:?}")]
    Duplicate(String),
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
}

impl ParseError {
    pub fn line(line: usize, msg: impl Into<String>) -> Self {
        ParseError::Line { line, msg: msg.into() }
    }
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
}
