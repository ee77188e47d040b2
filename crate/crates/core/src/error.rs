use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    Shape {
        op: &'static str,
        lhs: Dims,
        rhs: Dims,
    },

    #[error("index {index} out of range for {what} (bound {bound})")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("routing error: {0}")]
    Routing(String),

    #[error("malformed sequence: {0}")]
    MalformedSequence(String),

    #[error("audio too short: {samples} samples, need at least {window}")]
    TooShort { samples: usize, window: usize },

    #[error("limit exceeded: {0}")]
    Limit(String),

    #[error("{context} format error{}: {msg}", entry.as_ref().map(|e| format!(" at `{e}`")).unwrap_or_default())]
    Format {
        context: &'static str,
        entry: Option<String>,
        msg: String,
    },

    #[error("undefined rate: {0}")]
    Undefined(&'static str),

    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: Dims(lhs.to_vec()),
            rhs: Dims(rhs.to_vec()),
        }
    }

    pub(crate) fn format(context: &'static str, entry: Option<&str>, msg: impl Into<String>) -> Self {
        Error::Format {
            context,
            entry: entry.map(str::to_owned),
            msg: msg.into(),
        }
    }
}

/// Shape list printed as `[a×b×c]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims(pub Vec<usize>);

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join("×"))
    }
}
