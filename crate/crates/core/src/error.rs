use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("homography estimation failed: {0}")]
    Estimation(String),
    #[error("point maps to infinity under the homography")]
    Projection,
    #[error("registration failed for image `{image_id}`: {reason}")]
    Registration { image_id: String, reason: String },
    #[error("invalid surface manifest: {0}")]
    Manifest(String),
    #[error("vocabulary training failed: {0}")]
    Training(String),
    #[error("duplicate image id `{0}`")]
    DuplicateId(String),
    #[error("no descriptor for image `{image_id}` keypoint {index}")]
    MissingDescriptor { image_id: String, index: u32 },
    #[error("descriptor validation failed at record {record}: {reason}")]
    DescriptorValidation { record: usize, reason: String },
    #[error("inconsistent database: {0}")]
    Database(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}
