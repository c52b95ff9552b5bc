//! The draft-verify-accept kernel for one speculation cycle.

use rand::Rng;

use super::dist::CategoricalDist;
use super::SpecDecError;

/// A drafted continuation: `k` tokens plus the distribution each was (or is
/// claimed to have been) sampled from, so a verifier can replay the
/// accept/reject decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftProposal {
    tokens: Vec<usize>,
    per_position_dists: Vec<CategoricalDist>,
}

impl DraftProposal {
    pub fn new(
        tokens: Vec<usize>,
        per_position_dists: Vec<CategoricalDist>,
    ) -> Result<Self, SpecDecError> {
        if tokens.is_empty() {
            return Err(SpecDecError::EmptyDraft);
        }
        if tokens.len() != per_position_dists.len() {
            return Err(SpecDecError::ProposalLengthMismatch {
                tokens: tokens.len(),
                dists: per_position_dists.len(),
            });
        }
        let vocab = per_position_dists[0].vocab_size();
        for dist in &per_position_dists {
            if dist.vocab_size() != vocab {
                return Err(SpecDecError::VocabMismatch { expected: vocab, got: dist.vocab_size() });
            }
        }
        for &token in &tokens {
            if token >= vocab {
                return Err(SpecDecError::TokenOutOfRange { token, vocab });
            }
        }
        Ok(DraftProposal { tokens, per_position_dists })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn per_position_dists(&self) -> &[CategoricalDist] {
        &self.per_position_dists
    }

    pub fn draft_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.per_position_dists[0].vocab_size()
    }
}

/// Result of verifying one speculation cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyOutcome {
    /// Number of drafted tokens accepted, in `[0, k]`.
    pub accepted_count: usize,
    /// Tokens actually emitted; always `accepted_count + 1` of them.
    pub emitted_tokens: Vec<usize>,
    /// True when the final emitted token came from the rejection residual;
    /// false when it is the bonus token drawn after full acceptance.
    pub bonus_from_residual: bool,
}

impl VerifyOutcome {
    pub fn emitted_len(&self) -> usize {
        self.emitted_tokens.len()
    }
}

fn check_chain(
    target_dists: &[CategoricalDist],
    draft_len: usize,
    vocab: usize,
) -> Result<(), SpecDecError> {
    if draft_len == 0 {
        return Err(SpecDecError::EmptyDraft);
    }
    if target_dists.len() != draft_len + 1 {
        return Err(SpecDecError::ChainLengthMismatch {
            expected: draft_len + 1,
            got: target_dists.len(),
            drafts: draft_len,
        });
    }
    for dist in target_dists {
        if dist.vocab_size() != vocab {
            return Err(SpecDecError::VocabMismatch { expected: vocab, got: dist.vocab_size() });
        }
    }
    Ok(())
}

/// Runs one full speculation cycle: drafts `k` tokens from `draft_dists`,
/// then verifies them against `target_dists` (which must contain one extra
/// distribution for the bonus position).
pub fn speculative_cycle<R: Rng + ?Sized>(
    target_dists: &[CategoricalDist],
    draft_dists: &[CategoricalDist],
    rng: &mut R,
) -> Result<VerifyOutcome, SpecDecError> {
    if draft_dists.is_empty() {
        return Err(SpecDecError::EmptyDraft);
    }
    let vocab = draft_dists[0].vocab_size();
    for dist in draft_dists {
        if dist.vocab_size() != vocab {
            return Err(SpecDecError::VocabMismatch { expected: vocab, got: dist.vocab_size() });
        }
    }
    check_chain(target_dists, draft_dists.len(), vocab)?;
    let tokens: Vec<usize> = draft_dists.iter().map(|d| d.sample(rng)).collect();
    let proposal = DraftProposal::new(tokens, draft_dists.to_vec())?;
    verify_proposal(target_dists, &proposal, rng)
}

/// Verifies an externally drafted proposal against the target distributions.
///
/// The emitted-token distribution is exact only if the proposal's tokens were
/// really sampled from its per-position distributions; a token the drafter
/// could never have produced (`q_i(x) = 0`) is reported as an error because
/// it signals drafter/verifier inconsistency.
pub fn verify_proposal<R: Rng + ?Sized>(
    target_dists: &[CategoricalDist],
    proposal: &DraftProposal,
    rng: &mut R,
) -> Result<VerifyOutcome, SpecDecError> {
    let k = proposal.draft_len();
    let vocab = proposal.vocab_size();
    check_chain(target_dists, k, vocab)?;

    let mut emitted = Vec::with_capacity(k + 1);
    for position in 0..k {
        let token = proposal.tokens()[position];
        let p = target_dists[position].prob(token);
        let q = proposal.per_position_dists()[position].prob(token);
        if q == 0.0 {
            return Err(SpecDecError::ZeroDraftProbability { position, token });
        }
        let accept_prob = (p / q).min(1.0);
        if rng.gen::<f64>() < accept_prob {
            emitted.push(token);
            continue;
        }
        let replacement = sample_residual(
            &target_dists[position],
            &proposal.per_position_dists()[position],
            rng,
        );
        emitted.push(replacement);
        return Ok(VerifyOutcome {
            accepted_count: position,
            emitted_tokens: emitted,
            bonus_from_residual: true,
        });
    }
    emitted.push(target_dists[k].sample(rng));
    Ok(VerifyOutcome { accepted_count: k, emitted_tokens: emitted, bonus_from_residual: false })
}

/// Draws from `max(0, p - q)` renormalized. A rejection can only occur when
/// that residual has positive mass; the fallback to the raw target guards the
/// measure-zero float corner without distorting the distribution.
fn sample_residual<R: Rng + ?Sized>(
    target: &CategoricalDist,
    draft: &CategoricalDist,
    rng: &mut R,
) -> usize {
    let residual: Vec<f64> = target
        .probs()
        .iter()
        .zip(draft.probs())
        .map(|(p, q)| (p - q).max(0.0))
        .collect();
    let mass: f64 = residual.iter().sum();
    if mass <= 0.0 {
        return target.sample(rng);
    }
    let u = rng.gen::<f64>() * mass;
    let mut cumulative = 0.0;
    for (token, &r) in residual.iter().enumerate() {
        if r > 0.0 {
            cumulative += r;
            if u < cumulative {
                return token;
            }
        }
    }
    residual.iter().rposition(|&r| r > 0.0).expect("mass checked positive")
}

/// Mean emitted tokens per cycle over a stream of outcomes.
pub fn measure_acceptance(outcomes: &[VerifyOutcome]) -> Result<f64, SpecDecError> {
    if outcomes.is_empty() {
        return Err(SpecDecError::EmptyOutcomes);
    }
    let total: usize = outcomes.iter().map(VerifyOutcome::emitted_len).sum();
    Ok(total as f64 / outcomes.len() as f64)
}
