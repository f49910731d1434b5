use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("PNG decode failed: {0}")]
    PngDecode(String),
    #[error("PNG encode failed: {0}")]
    PngEncode(String),
    #[error("unsupported bit depth: {0} (only 8-bit PNG is accepted)")]
    UnsupportedBitDepth(u8),
    #[error("unsupported colour type: {0} (only RGB and RGBA PNG are accepted)")]
    UnsupportedColorType(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("singular stain matrix (|det| = {0:e})")]
    SingularMatrix(f64),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("insufficient tissue: {found} pixels above the OD threshold, need {required}")]
    InsufficientTissue { found: usize, required: usize },
    #[error("degenerate OD covariance: rank < 2 (eigenvalue ratio {0:e})")]
    DegenerateCovariance(f64),
    #[error("zero-mean band {0} in reference image")]
    ZeroMeanBand(usize),
    #[error("image too small: {0}")]
    TooSmall(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("backward already run on this graph; re-run the forward pass first")]
    BackwardTwice,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
