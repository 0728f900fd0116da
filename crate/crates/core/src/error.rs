use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the pruning primitives.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("InvalidCheckpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("IdOutOfRange: token id {id} is outside a vocabulary of {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },
    #[error("SequenceTooLong: {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("EmptySequence: at least one token is required")]
    EmptySequence,
    #[error("UnknownId: {0}")]
    UnknownId(u32),
    #[error("InvalidTokenizer: {0}")]
    InvalidTokenizer(String),
    #[error("ClosureViolation: token {token:?} cannot be derived from retained merges")]
    ClosureViolation { token: Vec<u8> },
    #[error("LengthMismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("VocabMismatch: original has {original} entries, candidate has {candidate}")]
    VocabMismatch { original: usize, candidate: usize },
    #[error("EmptyCalibration: no calibration positions to score")]
    EmptyCalibration,
    #[error("FingerprintMismatch: calibration set is bound to another tokenizer")]
    FingerprintMismatch,
    #[error("BadLayerIndex: layer {layer} out of range for {n_layers} layers")]
    BadLayerIndex { layer: usize, n_layers: usize },
    #[error("TooFewLayers: operation needs at least 2 layers, model has {n_layers}")]
    TooFewLayers { n_layers: usize },
    #[error("BadK: cannot keep {keep} of {intermediate} neurons")]
    BadK { keep: usize, intermediate: usize },
    #[error("BadIndexList: layer {layer}: {reason}")]
    BadIndexList { layer: usize, reason: String },
    #[error("BadRemap: {0}")]
    BadRemap(String),
    #[error("ExecutorUnavailable: {0}")]
    ExecutorUnavailable(String),
    #[error("MissingTests: sample {0} has no test cases")]
    MissingTests(String),
    #[error("ZeroSavings: per-inference savings must be positive")]
    ZeroSavings,
}

impl Error {
    /// Stable variant name, used for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidCheckpoint(_) => "InvalidCheckpoint",
            Error::IdOutOfRange { .. } => "IdOutOfRange",
            Error::SequenceTooLong { .. } => "SequenceTooLong",
            Error::EmptySequence => "EmptySequence",
            Error::UnknownId(_) => "UnknownId",
            Error::InvalidTokenizer(_) => "InvalidTokenizer",
            Error::ClosureViolation { .. } => "ClosureViolation",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::VocabMismatch { .. } => "VocabMismatch",
            Error::EmptyCalibration => "EmptyCalibration",
            Error::FingerprintMismatch => "FingerprintMismatch",
            Error::BadLayerIndex { .. } => "BadLayerIndex",
            Error::TooFewLayers { .. } => "TooFewLayers",
            Error::BadK { .. } => "BadK",
            Error::BadIndexList { .. } => "BadIndexList",
            Error::BadRemap(_) => "BadRemap",
            Error::ExecutorUnavailable(_) => "ExecutorUnavailable",
            Error::MissingTests(_) => "MissingTests",
            Error::ZeroSavings => "ZeroSavings",
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
