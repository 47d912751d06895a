use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad config text, unknown key, invalid override or inconsistent settings.
    #[error("config error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: vflkit_core::Error,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {detail}")]
    Parse { path: String, line: usize, detail: String },
    #[error("{0}")]
    Runtime(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    /// 1 for configuration problems, 2 for everything that failed while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 1,
            AppError::Core {
                source: vflkit_core::Error::Config(_),
                ..
            } => 1,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> AppError {
        let path = path.into();
        move |source| AppError::Io { path, source }
    }
}

/// Attaches a location (config path or pipeline stage) to core errors.
pub trait Context<T> {
    fn context(self, what: &str) -> AppResult<T>;
}

impl<T> Context<T> for Result<T, vflkit_core::Error> {
    fn context(self, what: &str) -> AppResult<T> {
        self.map_err(|source| AppError::Core {
            context: what.to_string(),
            source,
        })
    }
}
