use std::path::PathBuf;

use emwave_surrogate::SurrogateError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Config(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Diverged(String),

    #[error("{0}")]
    Validation(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct Line<'a> {
    error: &'a str,
    code: i32,
    message: String,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::MissingFile(_) => "missing_file",
            CliError::Io(_) => "io",
            CliError::Data(_) => "data",
            CliError::Diverged(_) => "diverged",
            CliError::Validation(_) => "validation",
        }
    }

    /// Process exit code; 0 and 1 are never used for errors raised here.
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::MissingFile(_) => 4,
            CliError::Io(_) => 5,
            CliError::Data(_) => 6,
            CliError::Diverged(_) => 7,
            CliError::Validation(_) => 8,
        }
    }

    /// One-line JSON rendering for stderr.
    pub fn line(&self) -> String {
        let message = self.to_string().lines().collect::<Vec<_>>().join(" ");
        serde_json::to_string(&Line {
            error: self.kind(),
            code: self.code(),
            message,
        })
        .expect("error line serializes")
    }
}

impl From<emwave_core::Error> for CliError {
    fn from(e: emwave_core::Error) -> Self {
        use emwave_core::Error as E;
        match e {
            E::Io(io) => CliError::Io(io),
            E::InvalidGrid(_) | E::InvalidMaterial(_) | E::InvalidPacket(_) | E::InvalidConfig(_) => {
                CliError::Config(e.to_string())
            }
            E::NonFinite { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SurrogateError> for CliError {
    fn from(e: SurrogateError) -> Self {
        use SurrogateError as E;
        match e {
            E::Io(io) => CliError::Io(io),
            E::Core(c) => c.into(),
            E::Config(_) | E::TrainConfig(_) => CliError::Config(e.to_string()),
            E::Diverged { .. } | E::RolloutDiverged { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
