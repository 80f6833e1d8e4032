use std::path::Path;

use oneshot_core::config::ConfigError;
use oneshot_core::segmenter::SegmentError;
use oneshot_core::sim::SimError;
use oneshot_core::vlm::VlmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("endpoint failure: {0}")]
    Endpoint(VlmError),
    #[error("invalid decomposition: {0}")]
    Decomposition(String),
    #[error(transparent)]
    Grid(SimError),
    #[error(transparent)]
    Simulation(SimError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Format { .. } => 3,
            CliError::Endpoint(_) => 4,
            CliError::Grid(_) => 5,
            CliError::Decomposition(_) => 6,
            CliError::Simulation(_) => 7,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

impl From<VlmError> for CliError {
    fn from(e: VlmError) -> Self {
        match e {
            VlmError::MissingCredential(_) | VlmError::Transport(_) | VlmError::Timeout => CliError::Endpoint(e),
            other => CliError::Decomposition(other.to_string()),
        }
    }
}

impl From<SegmentError> for CliError {
    fn from(e: SegmentError) -> Self {
        CliError::Decomposition(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::GridMismatch(_) | SimError::NoResults => CliError::Grid(e),
            other => CliError::Simulation(other),
        }
    }
}
