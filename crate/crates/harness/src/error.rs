use std::path::PathBuf;

use dereverb_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("unknown model id `{0}`")]
    UnknownModel(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Wav { path: PathBuf, source: hound::Error },
    #[error("{path}: {msg}")]
    BadWav { path: PathBuf, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{context}: {source}")]
    Core { context: String, source: CoreError },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    /// 1 usage, 2 data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) | HarnessError::UnknownModel(_) => 1,
            HarnessError::Core { source: CoreError::NonFiniteLoss { .. } | CoreError::NonFiniteSample(_), .. } => 3,
            _ => 2,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}

pub(crate) trait CoreContext<T> {
    fn context(self, what: impl Into<String>) -> Result<T>;
}

impl<T> CoreContext<T> for std::result::Result<T, CoreError> {
    fn context(self, what: impl Into<String>) -> Result<T> {
        self.map_err(|source| HarnessError::Core { context: what.into(), source })
    }
}
