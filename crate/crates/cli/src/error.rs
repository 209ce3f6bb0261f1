use std::path::{Path, PathBuf};

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}", .0.join("; "))]
    Usage(Vec<String>),
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("missing input {path}: {what}")]
    Missing { path: PathBuf, what: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(#[from] maskwatch_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn missing(path: &Path, what: &str) -> Self {
        CliError::Missing { path: path.to_path_buf(), what: what.to_string() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Missing { .. } => "missing_input",
            CliError::Io { .. } => "io",
            CliError::Failed(_) => "failed",
            CliError::Core(_) => "runtime",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }

    /// One line of JSON for stderr.
    pub fn to_json_line(&self) -> String {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Config(fields) | CliError::Usage(fields) = self {
            v["details"] = json!(fields);
        }
        v.to_string()
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

from_core!(
    maskwatch_core::dataset::DatasetError,
    maskwatch_core::preprocess::PreprocessError,
    maskwatch_core::model::ModelError,
    maskwatch_core::train_eval::TrainError,
    maskwatch_core::train_eval::MetricsError,
    maskwatch_core::live::LiveError,
    maskwatch_core::alerts::AlertError
);
