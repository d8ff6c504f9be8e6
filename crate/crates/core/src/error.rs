use thiserror::Error;

/// Errors raised anywhere in the simulation or analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("grid overflow at K = {k}, eps = {eps} (kick {kick}): edge population {edge_probability:.3e} exceeds {threshold:.1e}; increase the momentum grid")]
    GridOverflow {
        k: f64,
        eps: f64,
        kick: usize,
        edge_probability: f64,
        threshold: f64,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("no convergence: {message}")]
    NonConvergence {
        message: String,
        /// Best parameter vector reached before giving up, when one exists.
        last_iterate: Vec<f64>,
    },

    #[error("manifest validation failed: {0}")]
    Manifest(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Range(_) | Error::Manifest(_) | Error::Parse(_) => 2,
            Error::Degenerate(_) => 2,
            Error::NonConvergence { .. } => 3,
            Error::GridOverflow { .. } => 4,
            Error::Io { .. } => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
