use std::path::PathBuf;

use crate::data::nifti::NiftiError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("sizing error: axis {axis} has extent {extent}, expected a power of two")]
    Sizing { axis: usize, extent: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("no parameter path matches prefix `{0}`")]
    Path(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("numeric abort: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("missing file: {}", .0.display())]
    Missing(PathBuf),

    #[error(transparent)]
    Nifti(#[from] NiftiError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
