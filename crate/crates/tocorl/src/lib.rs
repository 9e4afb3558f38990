//! tocorl: a desk-scale laboratory for token-conditioned reinforcement
//! learning on tabular sequence policies.
//!
//! The crate trains a small autoregressive policy on synthetic factual-QA
//! tasks with mixed normal/token-conditional rollouts and group-relative
//! advantages, alongside three baselines (REINFORCE, GRPO,
//! adaptive-thinking). A separate module verifies the framework's three
//! analytic guarantees by brute force on flat sequence-level distributions.
//!
//! Layout:
//! - [`vocab`], [`policy`]: the trainable policy and its exact
//!   log-probabilities and gradients.
//! - [`conditioning`]: token prefixes, token-conditional sampling, and the
//!   Bernoulli-mixed rollout policy.
//! - [`rewards`]: verifier, format/length shaping, group-relative
//!   advantage estimators.
//! - [`theory`]: enumerate-everything oracles for the tilted reference
//!   distribution, the KL/policy-gradient equivalence, and the surrogate
//!   objective bound.
//! - [`mod@env`]: the synthetic task family, scripted initial policy and
//!   prefix provider, and evaluation.
//! - [`trainer`]: the training loops.
//! - [`config`], [`plot`]: run configuration and output artifacts.
//!
//! The guide under `book/` walks through each concept; its code snippets
//! compile and run as doc-tests of this crate.

pub mod conditioning;
pub mod config;
pub mod env;
pub mod plot;
pub mod policy;
pub mod rewards;
pub mod theory;
pub mod trainer;
pub mod vocab;

pub use policy::{AutoregressivePolicy, LogProbGradient, Sequence};
pub use vocab::{PromptId, TokenId, Vocabulary};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("prompt id {prompt} out of range (table has {num_prompts} prompts)")]
    PromptOutOfRange { prompt: usize, num_prompts: usize },

    #[error("token id {token} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: usize, vocab_size: usize },

    #[error("sequence is empty")]
    EmptySequence,

    #[error("non-finite value {0} in gradient or step size")]
    NonFiniteUpdate(f64),

    #[error("prefix length k = {0} must be at least 3")]
    PrefixTooShort(usize),

    #[error("prefix length {prefix_len} must be shorter than max_len {max_len}")]
    PrefixExceedsMaxLen { prefix_len: usize, max_len: usize },

    #[error("invalid prefix: {0}")]
    InvalidPrefix(String),

    #[error("no cached provider response for prompt {0}")]
    MissingPregeneration(usize),

    #[error("group size {0} must be at least 2")]
    GroupTooSmall(usize),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("advantage hypothesis violated: every action has zero advantage")]
    AssumptionViolated,

    #[error("enumeration of {bound} sequences exceeds cap {cap}")]
    EnumerationCapExceeded { bound: u128, cap: u128 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(doctest)]
mod book;
