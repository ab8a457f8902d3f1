//! Contrastive decoding with implicit rewards for weak-to-strong alignment.
//!
//! A small aligned model and its reference define an implicit reward
//! `β · (log π_r − log π_ref)`. Contrastive decoding between the two produces
//! responses that a stronger model is then fine-tuned on (SFT), followed by a
//! DPO stage on preference pairs built from the same generations.

pub mod cd;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod generate;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod records;
pub mod reward;
pub mod seeds;
pub mod task;
pub mod train;
pub mod vocab;

pub use cd::{cd_generate, cd_next_token_distribution, DecodeConfig, DecodeMode};
pub use error::{Error, Result};
pub use generate::sample_standard;
pub use model::{LanguageModel, ModelKind, NGramParams, NeuralDims, NeuralParams};
pub use vocab::{build_vocab, Sequence, TokenId, Vocab, BOS, EOS};
