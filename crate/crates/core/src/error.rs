use thiserror::Error;

/// Errors raised by parameter validation, simulation and the PDE solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{field} {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("control value {value} escapes the volatility band [{lo}, {hi}]")]
    ControlOutOfBand { value: f64, lo: f64, hi: f64 },

    #[error("invalid control: {0}")]
    InvalidControl(String),

    #[error("need at least {required} paths, got {got}")]
    TooFewPaths { required: usize, got: usize },

    #[error("grid incompatible: {0}")]
    GridIncompatible(String),

    #[error("level ordering violated: require {0}")]
    LevelOrder(String),

    #[error("stability condition violated: {scheme} needs n_t >= {required_steps}, got n_t = {given}")]
    Stability {
        scheme: &'static str,
        required_steps: usize,
        given: usize,
    },

    #[error("missing series: {0}")]
    MissingSeries(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
