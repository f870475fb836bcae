use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions or invalid parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Normalization statistics collapsed below the floor.
    #[error("degenerate gradient statistics: std {std:e} is below floor {floor:e}")]
    DegenerateStatistics { std: f64, floor: f64 },

    /// No device survived truncation this round; the update must be skipped.
    #[error("round skipped: no active devices")]
    RoundSkipped,

    /// The model left the finite range.
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
