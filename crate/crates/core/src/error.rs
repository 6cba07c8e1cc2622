use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular transform (|det| below 1e-12)")]
    SingularTransform,

    #[error("blended skinning matrix is singular (|det| below 1e-12)")]
    SingularBlend,

    #[error("non-finite activation in weight network layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("training diverged at step {step}: loss is {loss}")]
    DivergedTraining { step: usize, loss: f64 },

    #[error("invalid resolution {0}: need at least 2 nodes per axis")]
    InvalidResolution(usize),

    #[error("index {index} out of range (have {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed {what}: {source}")]
    Parse {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
