use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("assumption fit failed: {0}")]
    FitFailure(String),

    #[error("frequency cutoff insufficient: {0}")]
    CutoffInsufficient(String),

    #[error("kernel mass at the box edge is not negligible: {0}")]
    BoundaryMass(String),

    #[error("trajectory aborted at t = {time}: {reason}")]
    Aborted { time: f64, reason: String },

    #[error("too many aborted trajectories: {aborted} of {replicas}")]
    TooManyAborts { aborted: usize, replicas: usize },

    #[error("oracle grid too coarse: relative refinement change {0:e}")]
    GridTooCoarse(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("window too short: {0}")]
    WindowTooShort(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
