//! Response-length traffic models.

use super::RolloutError;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use std::io::BufRead;

/// Where response lengths come from. Every variant truncates to
/// `[1, max_tokens]` after sampling, mirroring a serving-side generation cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LengthDistribution {
    /// Long-tailed lengths: `exp(N(mu, sigma^2))`, rounded.
    Lognormal { mu: f64, sigma: f64, max_tokens: usize },
    /// Resampling with replacement from an observed length set.
    Empirical { samples: Vec<usize>, max_tokens: usize },
    /// Every response is exactly `len` tokens (subject to the cap).
    Constant { len: usize, max_tokens: usize },
}

impl LengthDistribution {
    pub fn max_tokens(&self) -> usize {
        match self {
            LengthDistribution::Lognormal { max_tokens, .. }
            | LengthDistribution::Empirical { max_tokens, .. }
            | LengthDistribution::Constant { max_tokens, .. } => *max_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), RolloutError> {
        if self.max_tokens() == 0 {
            return Err(RolloutError::ZeroMaxTokens);
        }
        match self {
            LengthDistribution::Lognormal { mu, sigma, .. } => {
                if !mu.is_finite() {
                    return Err(RolloutError::BadMu(*mu));
                }
                if !sigma.is_finite() || *sigma <= 0.0 {
                    return Err(RolloutError::BadSigma(*sigma));
                }
            }
            LengthDistribution::Empirical { samples, .. } => {
                if samples.is_empty() {
                    return Err(RolloutError::EmptySamples);
                }
                if let Some(index) = samples.iter().position(|&s| s == 0) {
                    return Err(RolloutError::ZeroSample { index });
                }
            }
            LengthDistribution::Constant { len, .. } => {
                if *len == 0 {
                    return Err(RolloutError::ZeroConstantLength);
                }
            }
        }
        Ok(())
    }

    /// Reads one integer length per line; blank lines are skipped.
    pub fn empirical_from_reader(
        reader: impl BufRead,
        max_tokens: usize,
    ) -> Result<Self, RolloutError> {
        let mut samples = Vec::new();
        for (index, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| RolloutError::BadLengthLine {
                line: index + 1,
                message: e.to_string(),
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let value: usize = trimmed.parse().map_err(|e| RolloutError::BadLengthLine {
                line: index + 1,
                message: format!("{e}"),
            })?;
            samples.push(value);
        }
        let dist = LengthDistribution::Empirical { samples, max_tokens };
        dist.validate()?;
        Ok(dist)
    }
}

/// Draws `n` integer lengths in `[1, max_tokens]`.
pub fn sample_lengths<R: Rng + ?Sized>(
    dist: &LengthDistribution,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>, RolloutError> {
    dist.validate()?;
    let cap = dist.max_tokens();
    let clamp = |len: usize| len.clamp(1, cap);
    let lengths = match dist {
        LengthDistribution::Lognormal { mu, sigma, .. } => {
            let lognormal =
                LogNormal::new(*mu, *sigma).map_err(|_| RolloutError::BadSigma(*sigma))?;
            (0..n)
                .map(|_| {
                    let raw = lognormal.sample(rng).round();
                    if raw >= cap as f64 {
                        cap
                    } else {
                        clamp(raw as usize)
                    }
                })
                .collect()
        }
        LengthDistribution::Empirical { samples, .. } => {
            (0..n).map(|_| clamp(samples[rng.gen_range(0..samples.len())])).collect()
        }
        LengthDistribution::Constant { len, .. } => vec![clamp(*len); n],
    };
    Ok(lengths)
}
