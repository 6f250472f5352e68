use std::path::PathBuf;

use dpa_core::gateway::GatewayError;
use dpa_core::jsonl::JsonlError;
use dpa_core::prefdata::PrefError;
use dpa_core::rerank::RerankError;
use dpa_core::store::StoreError;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing upstream artifact {path} (produced by {producer})")]
    MissingArtifact { path: PathBuf, producer: &'static str },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::MissingArtifact { .. } => 4,
            CliError::Jsonl(_) | CliError::Store(_) | CliError::Io { .. } | CliError::Format { .. } => 5,
            CliError::Gateway(_) => 6,
            CliError::Other(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "invalid_config",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::Jsonl(_) | CliError::Store(_) | CliError::Io { .. } | CliError::Format { .. } => "io",
            CliError::Gateway(_) => "gateway",
            CliError::Other(_) => "failed",
        }
    }

    /// One-line JSON report for stderr.
    pub fn report(&self, stage: Option<&str>) -> String {
        json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "stage": stage,
            "message": self.to_string(),
        })
        .to_string()
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<RerankError> for CliError {
    fn from(e: RerankError) -> Self {
        match e {
            RerankError::Store(s) => CliError::Store(s),
            RerankError::Header { path, message } => CliError::Format { path, message },
            e => CliError::Other(e.to_string()),
        }
    }
}

impl From<PrefError> for CliError {
    fn from(e: PrefError) -> Self {
        match e {
            PrefError::Gateway(g) => CliError::Gateway(g),
            e => CliError::Other(e.to_string()),
        }
    }
}
