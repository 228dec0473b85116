use thiserror::Error;

use crate::controller::ControllerFault;
use crate::mlp::MlpError;
use crate::sim::SimFault;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Sim(#[from] SimFault),

    #[error(transparent)]
    Controller(#[from] ControllerFault),

    #[error(transparent)]
    Mlp(#[from] MlpError),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
