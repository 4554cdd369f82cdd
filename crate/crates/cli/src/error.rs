use std::path::PathBuf;

use thiserror::Error;

use tutorflow::dataset::DatasetError;
use tutorflow::directive::{ConfigError, EngineError, ExecutionFailure, PlanError};
use tutorflow::evaluation::pipeline::PipelineError;
use tutorflow::evaluation::report::ReportError;
use tutorflow::providers::ProviderError;
use tutorflow_service::{SourceError, StoreError, TutorError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: ConfigError,
    },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Questions(#[from] SourceError),
    #[error(transparent)]
    Service(#[from] TutorError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cache: {0}")]
    Cache(String),
    #[error("{failed} of {total} items failed")]
    Partial { failed: usize, total: usize },
}

impl From<ExecutionFailure> for CliError {
    fn from(failure: ExecutionFailure) -> Self {
        CliError::Engine(failure.error)
    }
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Config { .. } => "config",
            CliError::Plan(_) => "plan",
            CliError::Engine(EngineError::Budget { .. }) => "budget",
            CliError::Engine(EngineError::Provider { .. }) | CliError::Provider(_) => "provider",
            CliError::Engine(_) => "engine",
            CliError::Dataset(_) => "dataset",
            CliError::Pipeline(PipelineError::Feedback { source, .. })
                if matches!(source.error, EngineError::Budget { .. }) =>
            {
                "budget"
            }
            CliError::Pipeline(_) => "pipeline",
            CliError::Report(_) => "report",
            CliError::Questions(_) => "questions",
            CliError::Service(_) => "service",
            CliError::Store(_) => "store",
            CliError::Cache(_) => "cache",
            CliError::Partial { .. } => "partial",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// The single-line JSON written to stderr.
    pub fn to_json_line(&self) -> String {
        let mut message = self.to_string();
        let mut source = std::error::Error::source(self);
        while let Some(inner) = source {
            let text = inner.to_string();
            if !message.contains(&text) {
                message.push_str(": ");
                message.push_str(&text);
            }
            source = inner.source();
        }
        let message = message.split_whitespace().collect::<Vec<_>>().join(" ");
        serde_json::json!({"error": self.kind(), "message": message}).to_string()
    }
}
