//! Explicit categorical distributions with validated invariants.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{SpecDecError, MAX_VOCAB};

/// Tolerance on the probability sum at construction time.
const SUM_TOLERANCE: f64 = 1e-12;

/// A probability distribution over a small explicit vocabulary.
///
/// Invariants enforced at construction: every entry is finite and
/// non-negative, the entries sum to 1 within `1e-12`, and the vocabulary has
/// between 2 and [`MAX_VOCAB`] entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CategoricalDist {
    probs: Vec<f64>,
}

impl CategoricalDist {
    pub fn new(probs: Vec<f64>) -> Result<Self, SpecDecError> {
        if probs.len() < 2 || probs.len() > MAX_VOCAB {
            return Err(SpecDecError::BadVocabSize(probs.len()));
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(SpecDecError::BadProbability { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(SpecDecError::NotNormalized { sum });
        }
        Ok(CategoricalDist { probs })
    }

    /// Normalizes arbitrary non-negative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self, SpecDecError> {
        if weights.len() < 2 || weights.len() > MAX_VOCAB {
            return Err(SpecDecError::BadVocabSize(weights.len()));
        }
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(SpecDecError::BadProbability { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(SpecDecError::DegenerateWeights(total));
        }
        let probs = weights.iter().map(|w| w / total).collect();
        Ok(CategoricalDist { probs })
    }

    pub fn uniform(vocab: usize) -> Result<Self, SpecDecError> {
        if vocab < 2 || vocab > MAX_VOCAB {
            return Err(SpecDecError::BadVocabSize(vocab));
        }
        Ok(CategoricalDist { probs: vec![1.0 / vocab as f64; vocab] })
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, token: usize) -> f64 {
        self.probs[token]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Index of the highest-probability token; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (index, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = index;
            }
        }
        best
    }

    /// Maps a uniform draw in `[0, 1)` to a token by CDF inversion.
    ///
    /// Tokens with zero probability are never returned; accumulated rounding
    /// error at the top of the CDF falls back to the last positive entry.
    pub fn sample_with_uniform(&self, u: f64) -> usize {
        debug_assert!((0.0..1.0).contains(&u));
        let mut cumulative = 0.0;
        for (token, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                cumulative += p;
                if u < cumulative {
                    return token;
                }
            }
        }
        self.probs.iter().rposition(|&p| p > 0.0).expect("distribution sums to 1")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sample_with_uniform(rng.gen::<f64>())
    }

    /// Total variation distance to another distribution on the same vocabulary.
    pub fn tv_distance(&self, other: &CategoricalDist) -> Result<f64, SpecDecError> {
        if other.vocab_size() != self.vocab_size() {
            return Err(SpecDecError::VocabMismatch {
                expected: self.vocab_size(),
                got: other.vocab_size(),
            });
        }
        let sum: f64 = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(0.5 * sum)
    }
}

impl TryFrom<Vec<f64>> for CategoricalDist {
    type Error = SpecDecError;

    fn try_from(probs: Vec<f64>) -> Result<Self, Self::Error> {
        CategoricalDist::new(probs)
    }
}

impl From<CategoricalDist> for Vec<f64> {
    fn from(dist: CategoricalDist) -> Vec<f64> {
        dist.probs
    }
}
