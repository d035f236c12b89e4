use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dataset failed validation:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("singular ridge system (penalty {penalty}); features are collinear")]
    SingularSystem { penalty: f64 },

    #[error("no training observations in cell {0}")]
    EmptyCell(String),

    #[error("feature width mismatch: fitted on {expected} columns, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("training arm z={arm} of fold {fold} has no observations")]
    EmptyArm { fold: usize, arm: u8 },

    #[error("benchmark: k_alpha * G_alpha = {0} >= 1, C_alpha undefined")]
    BenchmarkUndefined(f64),

    #[error("solver did not converge: {0}")]
    Solver(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
