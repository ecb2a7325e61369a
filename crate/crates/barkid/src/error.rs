use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: {what} hash mismatch (expected {expected}, found {found})")]
    HashMismatch { path: PathBuf, what: &'static str, expected: String, found: String },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error(transparent)]
    Core(#[from] barkid_core::Error),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), reason: reason.into() }
    }

    /// Short machine-readable name of the failure class.
    pub fn kind(&self) -> &'static str {
        use barkid_core::Error as C;
        match self {
            Error::Config(_) => "config",
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => "missing_input",
            Error::Io { .. } => "io",
            Error::Format { .. } | Error::Image { .. } => "format",
            Error::HashMismatch { .. } => "hash_mismatch",
            Error::Core(C::Parameter { .. }) => "config",
            Error::Core(C::Training(_)) => "training",
            Error::Core(C::MissingDescriptor { .. } | C::DescriptorValidation { .. }) => "descriptor",
            Error::Core(C::Estimation(_) | C::Projection | C::Registration { .. } | C::Manifest(_)) => "registration",
            Error::Core(C::DuplicateId(_) | C::Database(_)) => "database",
            Error::Core(C::InvalidImage(_)) => "format",
        }
    }

    /// Process exit status for this failure; distinct per [`kind`](Self::kind).
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 2,
            "missing_input" => 3,
            "io" => 4,
            "format" => 5,
            "hash_mismatch" => 6,
            "training" => 7,
            "descriptor" => 8,
            "registration" => 9,
            "database" => 10,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": self.kind(),
            "code": self.exit_code(),
            "message": self.to_string(),
        })
    }
}
