//! Structural pruning of decoder-only transformer checkpoints.
//!
//! Vocabulary, layer and FFN-neuron pruning driven by the KL divergence
//! between the original and the pruned model's next-token distributions,
//! together with the reference forward pass they are scored with,
//! recovery-dataset construction and evaluation/efficiency metrics.
//!
//! The crate is `no_std` (it needs `alloc`); file formats, process-based test
//! execution and the command line live in the `prunekit` crate.
#![no_std]
extern crate alloc;

pub mod checkpoint;
mod error;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod pruner;
pub mod recovery;
pub mod rng;
pub mod tensor;
pub mod tokenizer;
pub mod toy;

pub use checkpoint::{Checkpoint, LayerWeights, TransformerConfig, Violation};
pub use error::{Error, Result};
pub use model::Distribution;
pub use objective::{CalibrationSample, CalibrationSet, Criterion};
pub use tokenizer::{BpeTokenizer, IdRemap, TokenSet};
