use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("duplicate document id {0:?}")]
    DuplicateDocument(String),
    #[error("duplicate query id {0:?} in {1} split")]
    DuplicateQuery(String, &'static str),
    #[error("qrels reference unknown ids: {}", .0.join(", "))]
    DanglingQrels(Vec<String>),
    #[error("target size {requested} is below the {minimum} documents relevant to labeled queries")]
    SubsetTooSmall { requested: usize, minimum: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("embedding row {0} contains a non-finite value")]
    NonFiniteEmbedding(usize),
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("identifier of length {len} exceeds maximum depth {max_depth}")]
    DepthOverflow { len: usize, max_depth: usize },
    #[error("identifier for {0:?} is a strict prefix of the identifier for {1:?}")]
    PrefixCollision(String, String),
    #[error("identifier map is not injective: {0:?} and {1:?} share a sequence")]
    NonInjective(String, String),
    #[error("token {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("sequence of length {len} exceeds the configured maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("operation requires head kind {expected}, model has {found}")]
    WrongHead { expected: &'static str, found: &'static str },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("softmax consistency needs at least two examples per batch")]
    NoNegatives,
    #[error("mixture has no examples to sample from")]
    EmptyMixture,
    #[error("missing scores for {} (query, doc) pairs, e.g. {}", .0.len(), .0.first().map(String::as_str).unwrap_or(""))]
    MissingScores(Vec<String>),
    #[error("unknown document id {0:?}")]
    UnknownDocument(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
}

pub type Result<T> = core::result::Result<T, Error>;
