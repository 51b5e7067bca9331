use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Buffer length or dimensions disagree with the declared shape.
    Shape(String),
    /// Two operands were expected to share a channel count.
    ChannelMismatch { expected: usize, found: usize },
    /// A value is NaN or infinite where finite input is required.
    NonFinite(&'static str),
    /// An argument violates the operation's precondition.
    InvalidArgument(String),
    /// Not enough data to carry out the operation.
    Insufficient(String),
    /// A linear system or transform is singular.
    Degenerate(String),
    /// A lookup key is absent.
    UnknownId(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::ChannelMismatch { expected, found } => {
                write!(f, "channel mismatch: expected {expected}, found {found}")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Insufficient(msg) => write!(f, "insufficient data: {msg}"),
            Error::Degenerate(msg) => write!(f, "degenerate input: {msg}"),
            Error::UnknownId(id) => write!(f, "unknown id: {id}"),
        }
    }
}

impl core::error::Error for Error {}
