use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Failures surfaced by core operations.
///
/// Shape errors inside the autodiff graph are programming errors and panic
/// instead; everything reachable from user data comes back through here.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A documented precondition of an operation was violated.
    Contract(String),
    /// An input frame or dataset is unusable (empty, missing normals, ...).
    InvalidInput(String),
    /// Training produced a non-finite loss.
    NonFinite(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
        }
    }
}

#[macro_export]
#[doc(hidden)]
macro_rules! contract {
    ($($arg:tt)*) => {
        $crate::Error::Contract(::alloc::format!($($arg)*))
    };
}

impl core::error::Error for Error {}
