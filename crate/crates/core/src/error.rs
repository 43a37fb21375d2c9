use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("png codec: {0}")]
    Png(String),
    #[error("unknown shape `{0}`")]
    UnknownShape(String),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("degenerate statistic: {0}")]
    Undefined(String),
    #[error("target not found for query `{0}`")]
    TargetNotFound(String),
    #[error(transparent)]
    Provider(#[from] crate::providers::ProviderError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn mismatch(left: (usize, usize), right: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            left_w: left.0,
            left_h: left.1,
            right_w: right.0,
            right_h: right.1,
        }
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Png(e.to_string())
    }
}
