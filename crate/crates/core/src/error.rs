//! Error type shared by the core modules.

use alloc::string::String;
use core::fmt;

#[derive(Clone, Debug, PartialEq)]
pub enum CoreError {
    /// Invalid topology, sizes, or other configuration.
    Config(String),
    /// Non-finite values encountered during computation.
    Numeric { what: String, step: usize },
    /// Shape or length mismatch between two objects that must agree.
    Shape(String),
    /// A contract precondition was violated by the caller.
    Contract(String),
    /// Invalid input data (non-finite, out of range, degenerate).
    Data(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Config(msg) => write!(f, "configuration error: {msg}"),
            CoreError::Numeric { what, step } => {
                write!(f, "numeric error at step {step}: {what}")
            }
            CoreError::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            CoreError::Contract(msg) => write!(f, "contract violation: {msg}"),
            CoreError::Data(msg) => write!(f, "data error: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
