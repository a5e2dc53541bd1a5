//! Soft Thinking: chain-of-thought decoding in a continuous concept space.
//!
//! During the thinking phase the decoder keeps the (filtered) next-token
//! distribution as a *concept token* and feeds the probability-weighted
//! mixture of token embeddings back into the model instead of committing to
//! a sampled id. Cold Stop ends thinking after a run of low-entropy steps.
//!
//! Modules:
//! - [`prob`]: softmax, top-k/top-p/top-n filtering, entropy, sampling.
//! - [`concept`]: embedding storage and the concept-space mixers.
//! - [`model`]: the model contract, a seeded tiny transformer and a Markov LM.
//! - [`decode`]: the two-phase decode loop and all strategies.
//! - [`oracle`]: exact path summation versus the concept-token approximation.
//! - [`metrics`]: Pass@k, length accounting and hyperparameter sweeps.
//! - [`trace`], [`config`], [`cli`]: JSON-lines traces, run configs and the CLI.

pub mod cli;
pub mod concept;
pub mod config;
pub mod decode;
pub mod error;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod prob;
pub mod trace;

pub use error::{Error, Result};

use rand::SeedableRng;

/// Index into the vocabulary.
pub type TokenId = usize;

/// The random stream used for sampling.
pub type DecodeRng = rand_chacha::ChaCha20Rng;

pub fn rng_from_seed(seed: u64) -> DecodeRng {
    DecodeRng::seed_from_u64(seed)
}
