use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the analytics in this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid edit: {0}")]
    InvalidEdit(String),

    #[error("span [{start},{end}) out of range for text of {len} characters")]
    OffsetOutOfRange { start: usize, end: usize, len: usize },

    #[error("span [{start},{end}) expected {expected:?} but text has {found:?}")]
    OriginalMismatch {
        start: usize,
        end: usize,
        expected: String,
        found: String,
    },

    #[error("spans [{}, {}) and [{}, {}) overlap", .first.0, .first.1, .second.0, .second.1)]
    Overlap {
        first: (usize, usize),
        second: (usize, usize),
    },

    #[error("similarity {0} outside [0, 1]")]
    SimilarityOutOfRange(f64),

    #[error("similarity scorer failed: {0}")]
    Scorer(String),

    #[error("annotator {0:?} has no scores")]
    EmptyScores(String),

    #[error("score {0} outside 1..=10")]
    ScoreOutOfRange(u8),

    #[error("ranking {0:?} is not a permutation of 1..=n")]
    NotPermutation(alloc::vec::Vec<u32>),

    #[error("need at least {needed} {what}, got {got}")]
    TooFew {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("input lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("record {id}: {field}: {message}")]
    Record {
        id: String,
        field: String,
        message: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
