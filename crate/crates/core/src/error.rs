use std::path::PathBuf;

use thiserror::Error;

use crate::estimator::SdeModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty trajectory: t_end ({t_end}) is shorter than sample_dt ({sample_dt})")]
    EmptyTrajectory { t_end: f64, sample_dt: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-uniform sampling: {0}")]
    NonUniformSampling(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("state outside the unit disc: |m| = {norm}")]
    OutsideDisc { norm: f64 },

    #[error("validation loss became non-finite at epoch {epoch}")]
    Diverged {
        epoch: usize,
        checkpoint: Box<SdeModel>,
    },

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("autocorrelation never drops below 1/e within {max_lag} lags; increase max_lag")]
    NoCrossing { max_lag: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("model format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
