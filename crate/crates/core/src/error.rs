use thiserror::Error;

/// Errors produced by the planning toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("singular information matrix: {0}")]
    Singular(String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("criterion error: {0}")]
    Criterion(String),

    #[error("planning error: {0}")]
    Planning(String),

    #[error("campaign complete: all {0} scheduled runs have been recommended")]
    CampaignComplete(usize),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for the command-line tool: 2 validation, 3 numerical, 4 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::Validation(_)
            | Error::InsufficientData(_)
            | Error::CampaignComplete(_)
            | Error::Schema(_) => 2,
            Error::Estimation(_)
            | Error::Numerical(_)
            | Error::Singular(_)
            | Error::Sampler(_)
            | Error::Criterion(_)
            | Error::Planning(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}
