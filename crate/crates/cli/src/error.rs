use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ngdim_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("cannot serialize report: {0}")]
    Report(#[from] toml::ser::Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Io { .. } => "E_IO",
            CliError::Csv { .. } => "E_CSV",
            CliError::Usage(_) => "E_USAGE",
            CliError::Report(_) => "E_REPORT",
        }
    }

    /// Process exit status. 2 is left to argument parsing.
    pub fn exit_status(&self) -> i32 {
        match self.code() {
            "E_INPUT" => 3,
            "E_PARAM" => 4,
            "E_WHITEN" => 5,
            "E_DEGENERATE" => 6,
            "E_CONVERGE" => 7,
            "E_DIMENSION" => 8,
            "E_BOOTSTRAP" => 9,
            "E_ESTIMATE" => 10,
            "E_SIMULATION" => 11,
            "E_IO" => 12,
            "E_CSV" => 13,
            "E_USAGE" => 14,
            _ => 15,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}
