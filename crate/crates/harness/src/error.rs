use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad flags, configuration, or input files.
    #[error("{0}")]
    Usage(String),

    #[error("numerical failure: {0}")]
    Numerical(#[from] plg_core::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn usage(msg: impl Into<String>) -> Self {
        HarnessError::Usage(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        HarnessError::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit status: 1 for usage and I/O problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Numerical(plg_core::Error::Serialization(_)) => 1,
            HarnessError::Numerical(plg_core::Error::InvalidParams(_)) => 1,
            HarnessError::Numerical(plg_core::Error::InvalidTraceSet(_)) => 1,
            HarnessError::Numerical(_) => 2,
            HarnessError::Usage(_) | HarnessError::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
