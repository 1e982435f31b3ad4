use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("integrity error for patient {patient_id}: {message}")]
    Integrity { patient_id: String, message: String },

    #[error(
        "imputation failed for patient {patient_id}: covariate '{covariate}' is never observed"
    )]
    Imputation {
        patient_id: String,
        covariate: String,
    },

    #[error(
        "training diverged at epoch {epoch} (learning rate {learning_rate}): loss is not finite"
    )]
    TrainingDiverged { epoch: usize, learning_rate: f64 },

    #[error("policy iteration did not converge within {0} improvement rounds")]
    NonConvergence(usize),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("incompatible artifact {path}: {message}")]
    Compatibility { path: PathBuf, message: String },

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn compat(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Compatibility {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical/convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) => 1,
            Error::TrainingDiverged { .. } | Error::NonConvergence(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
