use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, EbrecError>;

#[derive(Debug, Error)]
pub enum EbrecError {
    #[error("missing input file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    /// Shape, range or argument violations on an in-memory API.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A loss, gradient or parameter update produced NaN or infinity.
    #[error("non-finite value in {component}{}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    NonFinite {
        component: String,
        epoch: Option<usize>,
    },
}

impl EbrecError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            EbrecError::MissingFile(path)
        } else {
            EbrecError::Io { path, source }
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        EbrecError::Contract(msg.into())
    }

    pub fn non_finite(component: impl Into<String>) -> Self {
        EbrecError::NonFinite {
            component: component.into(),
            epoch: None,
        }
    }

    /// True for failures caused by the input data rather than numerics or usage.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            EbrecError::MissingFile(_) | EbrecError::Io { .. } | EbrecError::Parse { .. }
        )
    }
}
