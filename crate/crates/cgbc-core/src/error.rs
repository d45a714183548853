use alloc::string::String;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors surfaced by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unbalanced brace at byte offset {offset}")]
    UnbalancedBrace { offset: usize },

    #[error("dangling record id `{id}`")]
    DanglingRecord { id: String },

    #[error("duplicate record id `{id}` within one manifest")]
    DuplicateRecordId { id: String },

    #[error("label for `{id}` is {value}, expected 0 or 1")]
    NonBinaryLabel { id: String, value: i64 },

    #[error("noise rate {rate} outside [0, 1]")]
    InvalidNoiseRate { rate: f64 },

    #[error("no functions to augment")]
    NoFunctions,

    #[error("function `{requested}` not found; available: {available}")]
    UnknownFunction { requested: String, available: String },

    #[error("k-gram sets have mismatched k: {left} vs {right}")]
    MismatchedK { left: usize, right: usize },

    #[error("need at least {needed} items, got {got}")]
    TooFewItems { needed: usize, got: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("undefined cosine distance: zero-norm vector")]
    ZeroNorm,

    #[error("purity threshold {pur} outside (0, 1]")]
    InvalidPurity { pur: f64 },

    #[error("sample ids must be 0..n-1 and unique")]
    InvalidSampleIds,

    #[error("embedding has non-finite component")]
    NonFiniteEmbedding,

    #[error("embedding dimensions disagree: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("ball membership inconsistent with the embedded batch")]
    InconsistentMembership,

    #[error("unknown sample id {id}")]
    UnknownSampleId { id: usize },

    #[error("invalid probability distribution")]
    InvalidDistribution,

    #[error("invalid parameter: {what}")]
    InvalidParameter { what: &'static str },

    #[error("internal invariant violated: {what}")]
    Internal { what: &'static str },
}
