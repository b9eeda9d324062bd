use thiserror::Error;

/// Errors raised by model construction, quantization and solving.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A tensor or net would exceed the configured size cap.
    #[error("resource cap exceeded: {what} needs {needed} entries, cap is {cap}")]
    Resource {
        what: String,
        needed: u128,
        cap: u128,
    },

    /// Quadrature produced an unusable result (typically resolution too coarse).
    #[error("quadrature failure: {0}")]
    Quadrature(String),

    /// Invalid configuration of a construction (ladders, nets, solver options).
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
