use alloc::string::String;

/// Errors raised by the simulation kernel.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A NaN or infinity was produced or supplied.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Invalid caller-supplied value (label out of range, bad boundaries, ...).
    #[error("input error: {0}")]
    Input(String),
    /// Inconsistent internal state, e.g. a trace that does not belong to a network.
    #[error("state error: {0}")]
    State(String),
    /// Invalid experiment or federation configuration.
    #[error("config error: {0}")]
    Config(String),
    /// A message crossing the party boundary does not match the protocol.
    #[error("protocol error (party {party}, round {round}): {detail}")]
    Protocol {
        party: usize,
        round: u64,
        detail: String,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
