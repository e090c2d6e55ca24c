use thiserror::Error;

/// Failure categories shared by every stage of the pipeline.
///
/// The CLI maps each category to its own process exit code.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or configuration (bad order, grid size, malformed spec file).
    #[error("configuration error: {0}")]
    Config(String),
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Input data is malformed (CSV shape, missing cells, constant series).
    #[error("data error: {0}")]
    Data(String),
    /// A matrix that must be positive definite is not (too few coefficients, rank deficiency).
    #[error("degenerate matrix: {0}")]
    Degenerate(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Degenerate(_) => 4,
        }
    }

    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Data(_) => "data",
            Error::Degenerate(_) => "degenerate",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
