use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    InvalidToken { id: u32, vocab_size: usize },
    #[error("sequence of length {len} exceeds context window {window}")]
    ContextOverflow { len: usize, window: usize },
    #[error("context must begin with the begin-of-sequence token")]
    MissingBos,
    #[error("begin-of-sequence token may not appear inside a sequence")]
    UnexpectedBos,
    #[error("empty sequence where a nonempty one is required")]
    EmptySequence,
    #[error("parameter vector has length {got}, layout requires {expected}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("non-finite parameter at index {0}")]
    NonFiniteParameter(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid preference pair: {0}")]
    InvalidPair(String),
    #[error("pair {index}: {source}")]
    Pair {
        index: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
    #[error("label {label} has {count} records, at least 2 are required")]
    TooFewRecords { label: &'static str, count: usize },
    #[error("unknown loss variant `{0}`")]
    UnknownVariant(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn at_pair(self, index: usize) -> Self {
        Error::Pair {
            index,
            source: alloc::boxed::Box::new(self),
        }
    }
}
