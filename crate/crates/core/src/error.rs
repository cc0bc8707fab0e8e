use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: empty loss support (mask selects no positions)")]
    EmptyLossSupport { op: &'static str },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward on a graph that was already freed")]
    GraphFreed,

    #[error("loss is not reachable from any tensor that requires grad")]
    NoGradPath,

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("sequence of {len} tokens exceeds max context {max}")]
    Overlong { len: usize, max: usize },

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("no encoder for layer {0}")]
    NoEncoder(usize),

    #[error("alignment failure: encoder produced {got} rows, expected {expected}")]
    Alignment { got: usize, expected: usize },

    #[error("cannot shift a sequence of length {len} left by {shift}")]
    ShiftOutOfRange { shift: usize, len: usize },

    #[error("capture length mismatch: {0}")]
    CaptureMismatch(String),

    #[error("layer {0} missing from capture cache")]
    MissingLayer(usize),

    #[error("frozen decoder violated: expected hash {expected}, found {found}")]
    FrozenDecoderViolated { expected: String, found: String },

    #[error("layer subset mismatch: requested {requested:?}, available {available:?}")]
    SubsetMismatch { requested: Vec<usize>, available: Vec<usize> },

    #[error("invalid layer spec `{0}`")]
    LayerSpec(String),

    #[error("sample {index}: {reason}")]
    Sample { index: usize, reason: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{0}")]
    Invalid(String),
}
