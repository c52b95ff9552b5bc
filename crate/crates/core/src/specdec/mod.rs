//! Exact speculative sampling over explicit categorical distributions.
//!
//! A speculation cycle drafts `k` tokens from cheap per-position proposal
//! distributions, then verifies them against the target model's
//! distributions with the accept/reject rule:
//!
//! * draft token `x` at position `i` is accepted with probability
//!   `min(1, p_i(x) / q_i(x))`;
//! * on the first rejection, a replacement token is drawn from the
//!   normalized positive residual `max(0, p_i - q_i)` and the cycle ends;
//! * if all `k` drafts are accepted, one bonus token is drawn from the
//!   target distribution at position `k`.
//!
//! Every cycle therefore emits between 1 and `k + 1` tokens, and the emitted
//! token at each position is distributed exactly according to the target
//! distribution at that position. [`exact_output_distribution`] checks that
//! claim by brute force: it enumerates every draft sequence and every
//! accept/reject branch, which is tractable for the small vocabularies the
//! oracle is limited to.
//!
//! [`NGramTable`] provides a model-free drafter in the same interface so the
//! cheap-drafter regime can be exercised end to end.

mod dist;
mod ngram;
mod oracle;
mod verify;

pub use dist::CategoricalDist;
pub use ngram::{ngram_draft, ngram_draft_sampled, NGramTable};
pub use oracle::{exact_output_distribution, ExactCycleDistribution};
pub use verify::{measure_acceptance, speculative_cycle, verify_proposal, DraftProposal, VerifyOutcome};

use thiserror::Error;

/// Hard ceiling on vocabulary size for explicit distributions.
pub const MAX_VOCAB: usize = 1024;
/// Enumeration oracle limits: `vocab^k` branches must stay tractable.
pub const MAX_ORACLE_VOCAB: usize = 8;
/// Enumeration oracle limit on draft length.
pub const MAX_ORACLE_DRAFT: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum SpecDecError {
    #[error("distribution needs between 2 and {MAX_VOCAB} entries, got {0}")]
    BadVocabSize(usize),
    #[error("probability at index {index} is {value}; entries must be finite and non-negative")]
    BadProbability { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, expected 1 within 1e-12")]
    NotNormalized { sum: f64 },
    #[error("weights sum to {0}; cannot normalize")]
    DegenerateWeights(f64),
    #[error("vocabulary mismatch: expected {expected}, got {got}")]
    VocabMismatch { expected: usize, got: usize },
    #[error("need {expected} target distributions for {drafts} draft positions, got {got}")]
    ChainLengthMismatch { expected: usize, got: usize, drafts: usize },
    #[error("draft length must be at least 1")]
    EmptyDraft,
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("proposal has {tokens} tokens but {dists} per-position distributions")]
    ProposalLengthMismatch { tokens: usize, dists: usize },
    #[error("drafted token {token} at position {position} has zero draft probability")]
    ZeroDraftProbability { position: usize, token: usize },
    #[error("enumeration over vocab {vocab} and draft length {draft_len} exceeds oracle limits ({MAX_ORACLE_VOCAB}, {MAX_ORACLE_DRAFT})")]
    EnumerationTooLarge { vocab: usize, draft_len: usize },
    #[error("no outcomes to aggregate")]
    EmptyOutcomes,
    #[error("n-gram order must be at least 1")]
    BadOrder,
    #[error("corpus must contain at least order + 1 = {0} tokens")]
    CorpusTooShort(usize),
    #[error("context has {got} tokens but the table requires at least {needed}")]
    ContextTooShort { needed: usize, got: usize },
}
