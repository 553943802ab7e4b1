use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("contract violated: {0}")]
    Contract(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        {
            let ok: bool = $cond;
            if !ok {
                return Err($crate::error::Error::Contract(format!($($arg)+)));
            }
        }
    };
}

macro_rules! dimension {
    ($cond:expr, $($arg:tt)+) => {
        {
            let ok: bool = $cond;
            if !ok {
                return Err($crate::error::Error::Dimension(format!($($arg)+)));
            }
        }
    };
}

pub(crate) use contract;
pub(crate) use dimension;
