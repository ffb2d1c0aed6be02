use std::path::PathBuf;

use thiserror::Error;

/// Failures of the command-line driver. Library errors keep the module and pipeline
/// stage they came from.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("[{module}] {stage}: {source}")]
    Stage {
        module: &'static str,
        stage: &'static str,
        #[source]
        source: geomot_core::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid config: {0}")]
    Config(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches a module and stage to library results.
pub trait StageExt<T> {
    fn stage(self, module: &'static str, stage: &'static str) -> CliResult<T>;
}

impl<T> StageExt<T> for geomot_core::Result<T> {
    fn stage(self, module: &'static str, stage: &'static str) -> CliResult<T> {
        self.map_err(|source| CliError::Stage { module, stage, source })
    }
}
