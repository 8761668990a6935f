use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid sizing: {0}")]
    Sizing(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate mass: total weight {0} is not positive")]
    DegenerateMass(f64),

    #[error("instance too large for enumeration: {0}")]
    SizeGuard(String),

    #[error("construction failed after {attempts} attempts: {reason}")]
    Construction { attempts: usize, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("malformed dataset file: {0}")]
    Format(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Sizing(_)
                | Error::Parameter(_)
                | Error::SizeGuard(_)
                | Error::InsufficientData(_)
                | Error::Format(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
