use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("user identifier must be non-empty")]
    InvalidUserId,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A group whose indicator vector has zero variance (empty or universal).
    #[error("group `{group}` is degenerate: size {size} of universe {universe}")]
    DegenerateGroup {
        group: String,
        size: usize,
        universe: usize,
    },

    #[error("rank {rank} exceeds matrix order {order}")]
    RankTooLarge { rank: usize, order: usize },

    #[error("embedding parts disagree on groups; only in svd: {only_svd:?}, only in walks: {only_walks:?}")]
    KeyMismatch {
        only_svd: Vec<String>,
        only_walks: Vec<String>,
    },

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    Vocab { id: usize, vocab: usize },

    #[error("batch contains no masked positions")]
    EmptyBatch,

    #[error("cannot split dataset: {0}")]
    Split(String),

    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("missing social embedding for group `{0}`")]
    MissingEmbedding(String),

    #[error("shape mismatch: {0}")]
    Shape(String),
}
