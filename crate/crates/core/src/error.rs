use thiserror::Error;

use crate::model::Frame;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("singular configuration: ions {0} and {1} coincide")]
    SingularConfiguration(usize, usize),

    #[error("frame mismatch: expected {expected:?} frame, got {found:?}")]
    FrameMismatch { expected: Frame, found: Frame },

    #[error("unstable equilibrium: stiffness eigenvalue {0:e} N/m is negative")]
    UnstableEquilibrium(f64),

    #[error("invalid mode: {0}")]
    InvalidMode(String),

    #[error("window too short: {duration:e} s, need more than 1/omega_r = {required:e} s")]
    WindowTooShort { duration: f64, required: f64 },

    #[error("degenerate wavevector: both wavenumbers are zero")]
    DegenerateWavevector,

    #[error("checkpoint rejected: {0}")]
    CheckpointMismatch(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("stage `{stage}` failed: {reason}")]
    StageFailed { stage: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 2,
            Error::SingularConfiguration(..)
            | Error::UnstableEquilibrium(_)
            | Error::InvalidMode(_)
            | Error::DegenerateWavevector
            | Error::WindowTooShort { .. }
            | Error::FrameMismatch { .. } => 3,
            Error::StageFailed { .. } => 4,
            Error::CheckpointMismatch(_) | Error::Corrupt(_) => 5,
            Error::Io(_) | Error::Json(_) => 6,
        }
    }
}
