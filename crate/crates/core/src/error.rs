use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("image {index}: {reason}")]
    Image { index: usize, reason: String },
    #[error("stack: {0}")]
    Stack(String),
    #[error("mask: {0}")]
    Mask(String),
    #[error("wrong pixel kind: expected {expected}, found {found}")]
    PixelKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("brdf: {0}")]
    Brdf(String),
    #[error("band {band} is not mapped by dictionary entry {entry}")]
    UnmappedBand { entry: usize, band: usize },
    #[error("encoder: {0}")]
    Encoder(String),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("classifier: {0}")]
    Classifier(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("metrics undefined: {0}")]
    EmptyConfusion(&'static str),
    #[error("scene: {0}")]
    Scene(String),
}

impl Error {
    pub(crate) fn at_image(index: usize, err: Error) -> Error {
        match err {
            Error::Image { .. } => err,
            other => Error::Image {
                index,
                reason: alloc::string::ToString::to_string(&other),
            },
        }
    }
}
