use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("fit needs at least {required} usable points, found {usable}")]
    InsufficientData { usable: usize, required: usize },
    #[error(transparent)]
    Core(#[from] hypodecay::Error),
    #[error("cannot serialize report: {0}")]
    Report(#[from] serde_json::Error),
}
