use thiserror::Error;

use maptraj_core::Error as CoreError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl HarnessError {
    /// 2 for configuration problems, 3 for data problems, 4 for numerical
    /// divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Divergence { .. } => 4,
            HarnessError::Output { .. } => 1,
            HarnessError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Shape { .. } | CoreError::SequenceLength { .. } => 2,
                CoreError::Schema { .. } | CoreError::Data(_) | CoreError::Modality(_) | CoreError::Io { .. } => 3,
            },
        }
    }

    pub(crate) fn output(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Output {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
