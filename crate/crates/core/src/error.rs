use crate::graph::DataError;
use crate::tensor::TensorError;

/// Top-level failure of an experiment stage.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{stage} (period {period:?}): {source}")]
    Stage {
        stage: &'static str,
        period: Option<usize>,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn in_stage(self, stage: &'static str, period: Option<usize>) -> Self {
        Error::Stage {
            stage,
            period,
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numerical, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Numerical(_) => 4,
            Error::Tensor(TensorError::NanGradient { .. } | TensorError::Domain { .. }) => 4,
            Error::Tensor(_) | Error::Io(_) => 1,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
