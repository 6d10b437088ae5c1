use thiserror::Error;

/// Errors surfaced by the engine.
///
/// Variants are grouped so the command-line front end can map each class
/// onto a fixed exit code (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("{line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{line}:{column}: unknown feature `{name}`")]
    UnknownFeature {
        name: String,
        line: usize,
        column: usize,
    },

    #[error("{line}:{column}: type error: {message}")]
    Type {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("model error: {0}")]
    Model(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable kind, used in the CLI's stderr JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Syntax { .. } | Error::UnknownFeature { .. } | Error::Type { .. } => "config",
            Error::Data(_) | Error::Schema(_) | Error::Csv(_) | Error::Io { .. } => "data",
            Error::Dimension { .. } => "data",
            Error::Json(_) => "data",
            Error::Model(_) => "model",
            Error::Evaluation(_) => "evaluation",
        }
    }

    /// Process exit code: 2 config, 3 data, 4 model, 5 evaluation.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 2,
            "data" => 3,
            "model" => 4,
            "evaluation" => 5,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
