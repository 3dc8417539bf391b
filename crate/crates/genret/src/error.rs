use std::path::PathBuf;

/// Errors of the std layer. Each maps to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error("{}:{line}: {message}", file.display())]
    Parse { file: PathBuf, line: usize, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Data(String),
    #[error("output directory {} is locked by another run", .0.display())]
    Locked(PathBuf),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] genret_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// 1 config, 2 data, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        use genret_core::Error as C;
        match self {
            Error::Config { .. } => 1,
            Error::Parse { .. } | Error::Data(_) => 2,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Io { .. } | Error::Locked(_) | Error::Runtime(_) => 3,
            Error::Core(e) => match e {
                C::InvalidConfig(_) | C::InvalidArgument(_) | C::WrongHead { .. } | C::NoNegatives | C::EmptyMixture => 1,
                _ => 2,
            },
        }
    }
}
