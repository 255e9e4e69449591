use thiserror::Error;

/// Error type shared by every module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An attribute config (or schema definition) violates the schema.
    #[error("schema violation: {0}")]
    Schema(String),

    /// Tensor/feature shapes do not line up (layer counts, map sizes, vector lengths).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numeric or structural argument is outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// One or more configuration keys failed validation; all failures are listed.
    #[error("configuration invalid:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    /// A stage was invoked before the artifact it consumes exists.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad user input (config, schema, missing
    /// artifacts) as opposed to runtime failures. The CLI maps these to
    /// exit code 1 and everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::InvalidArgument(_)
                | Error::Validation(_)
                | Error::MissingArtifact(_)
                | Error::Parse(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
