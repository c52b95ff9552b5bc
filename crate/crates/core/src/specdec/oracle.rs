//! Brute-force enumeration of a speculation cycle's output distribution.

use super::dist::CategoricalDist;
use super::{SpecDecError, MAX_ORACLE_DRAFT, MAX_ORACLE_VOCAB};

/// Exact distribution of one speculation cycle, computed by enumerating every
/// draft sequence and accept/reject branch.
#[derive(Debug, Clone)]
pub struct ExactCycleDistribution {
    /// Marginal of the token emitted at each position, conditioned on the
    /// cycle reaching that position. Entry `k` is the bonus position.
    pub per_position: Vec<CategoricalDist>,
    /// `accepted_count_pmf[c]` = probability that exactly `c` drafts are
    /// accepted (so `c + 1` tokens are emitted).
    pub accepted_count_pmf: Vec<f64>,
}

impl ExactCycleDistribution {
    /// Expected emitted tokens per cycle, bonus token included.
    pub fn expected_emitted(&self) -> f64 {
        self.accepted_count_pmf
            .iter()
            .enumerate()
            .map(|(count, &p)| (count + 1) as f64 * p)
            .sum()
    }

    /// Probability that the cycle emits a token at `position`, i.e. that at
    /// least `position` drafts were accepted.
    pub fn reach_probability(&self, position: usize) -> f64 {
        self.accepted_count_pmf[position..].iter().sum()
    }
}

struct Enumeration<'a> {
    targets: &'a [CategoricalDist],
    drafts: &'a [CategoricalDist],
    /// Unnormalized emitted-token mass per position.
    mass: Vec<Vec<f64>>,
    pmf: Vec<f64>,
}

impl Enumeration<'_> {
    fn walk(&mut self, position: usize, weight: f64) {
        let k = self.drafts.len();
        if position == k {
            // Full acceptance: the bonus token comes straight from the target.
            for (token, &p) in self.targets[k].probs().iter().enumerate() {
                self.mass[k][token] += weight * p;
            }
            self.pmf[k] += weight;
            return;
        }
        let target = &self.targets[position];
        let draft = &self.drafts[position];
        let residual: Vec<f64> = target
            .probs()
            .iter()
            .zip(draft.probs())
            .map(|(p, q)| (p - q).max(0.0))
            .collect();
        let residual_mass: f64 = residual.iter().sum();
        for (token, &q) in draft.probs().iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            let accept_prob = (target.prob(token) / q).min(1.0);
            let accept_weight = weight * q * accept_prob;
            if accept_weight > 0.0 {
                self.mass[position][token] += accept_weight;
                self.walk(position + 1, accept_weight);
            }
            let reject_weight = weight * q * (1.0 - accept_prob);
            if reject_weight > 0.0 {
                debug_assert!(residual_mass > 0.0);
                for (replacement, &r) in residual.iter().enumerate() {
                    if r > 0.0 {
                        self.mass[position][replacement] += reject_weight * r / residual_mass;
                    }
                }
                self.pmf[position] += reject_weight;
            }
        }
    }
}

/// Enumerates the exact output distribution of one speculation cycle.
///
/// Limited to vocabularies of at most [`MAX_ORACLE_VOCAB`] and draft lengths
/// of at most [`MAX_ORACLE_DRAFT`]; the walk visits `O(vocab^k)` branches.
pub fn exact_output_distribution(
    target_dists: &[CategoricalDist],
    draft_dists: &[CategoricalDist],
) -> Result<ExactCycleDistribution, SpecDecError> {
    if draft_dists.is_empty() {
        return Err(SpecDecError::EmptyDraft);
    }
    let vocab = draft_dists[0].vocab_size();
    for dist in draft_dists {
        if dist.vocab_size() != vocab {
            return Err(SpecDecError::VocabMismatch { expected: vocab, got: dist.vocab_size() });
        }
    }
    let k = draft_dists.len();
    if target_dists.len() != k + 1 {
        return Err(SpecDecError::ChainLengthMismatch {
            expected: k + 1,
            got: target_dists.len(),
            drafts: k,
        });
    }
    for dist in target_dists {
        if dist.vocab_size() != vocab {
            return Err(SpecDecError::VocabMismatch { expected: vocab, got: dist.vocab_size() });
        }
    }
    if vocab > MAX_ORACLE_VOCAB || k > MAX_ORACLE_DRAFT {
        return Err(SpecDecError::EnumerationTooLarge { vocab, draft_len: k });
    }

    let mut enumeration = Enumeration {
        targets: target_dists,
        drafts: draft_dists,
        mass: vec![vec![0.0; vocab]; k + 1],
        pmf: vec![0.0; k + 1],
    };
    enumeration.walk(0, 1.0);

    let per_position = enumeration
        .mass
        .iter()
        .map(|row| CategoricalDist::from_weights(row))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExactCycleDistribution { per_position, accepted_count_pmf: enumeration.pmf })
}
