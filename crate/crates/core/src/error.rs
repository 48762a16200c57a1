use thiserror::Error;

/// Errors produced by every module of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("shape mismatch at layer {index}: {detail}")]
    LayerShapeMismatch { index: usize, detail: String },
    #[error("kernel {kh}x{kw} larger than input {h}x{w}")]
    KernelTooLarge { kh: usize, kw: usize, h: usize, w: usize },
    #[error("kernel {kh}x{kw} is not square")]
    NonSquareKernel { kh: usize, kw: usize },
    #[error("maxout group size {group} does not divide {channels} channels")]
    BadGroupSize { group: usize, channels: usize },
    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("rank {rank} outside 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("image {h}x{w} smaller than the {field}x{field} receptive field")]
    ImageTooSmall { h: usize, w: usize, field: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload")]
    TruncatedPayload,
    #[error("inconsistent shapes in file: {0}")]
    ShapeInconsistent(String),
    #[error("unknown layer kind tag {0}")]
    UnknownLayerKind(u8),
    #[error("training diverged in epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
