use thiserror::Error;

/// Failure modes shared by every module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate direction: norm {norm:e} below threshold")]
    DegenerateDirection { norm: f64 },

    #[error("blow-up at t = {t}: state norm {norm:e} exceeds 1e12")]
    BlowUp { t: f64, norm: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("trajectory too close to a singularity at sample {index} (|G| = {norm:e})")]
    NearSingularity { index: usize, norm: f64 },

    #[error("trajectory segment carries no fundamental matrices")]
    MissingFundamentals,

    #[error("derivative block {index} is not invertible")]
    NonInvertible { index: usize },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("frame error: {0}")]
    Frame(String),

    #[error("parse error at position {pos} near '{token}': {message}")]
    Parse {
        pos: usize,
        token: String,
        message: String,
    },

    #[error("undefined symbol '{name}' at position {pos}")]
    UndefinedSymbol { name: String, pos: usize },

    #[error("unknown system '{0}'")]
    UnknownSystem(String),
}

impl Error {
    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::Input(_)
                | Error::Dimension { .. }
                | Error::Parse { .. }
                | Error::UndefinedSymbol { .. }
                | Error::UnknownSystem(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
