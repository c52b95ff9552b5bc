//! Closed-form models for step-time composition and acceptance lengths.
//!
//! These are the back-of-the-envelope companions to the simulators: given a
//! measured step-time breakdown they answer "how much of the step is
//! generation?" and "what is the best possible step speedup if generation
//! gets `alpha` times faster?" (the serial-fraction bound), and they convert
//! between a per-position acceptance probability `beta` and the expected
//! emitted tokens per cycle `alpha` for the i.i.d. acceptance process.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticError {
    #[error("stage time {name} is {value}; stage times must be finite and non-negative")]
    BadStageTime { name: &'static str, value: f64 },
    #[error("all stage times are zero")]
    ZeroTotal,
    #[error("acceptance length {alpha} outside [1, {max}] for draft length {k}")]
    AlphaOutOfRange { alpha: f64, k: usize, max: f64 },
    #[error("per-position acceptance probability {0} outside [0, 1]")]
    BetaOutOfRange(f64),
    #[error("draft length must be at least 1")]
    ZeroDraftLength,
    #[error("acceptance histogram is empty or has non-positive total weight")]
    DegenerateHistogram,
    #[error("acceptance histogram spans {len} emitted lengths but draft length {k} allows at most {max}")]
    HistogramTooLong { len: usize, k: usize, max: usize },
}

/// Per-step wall-clock breakdown of one RL training step, in seconds.
///
/// `gen_s` is rollout generation; `logprob_s` is the log-probability
/// recomputation pass; `prepare_s` covers weight sync and rollout-backend
/// preparation; `data_s` is the dataloader.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub data_s: f64,
    pub prepare_s: f64,
    pub gen_s: f64,
    pub logprob_s: f64,
    pub train_s: f64,
}

impl StageTimes {
    pub fn new(
        data_s: f64,
        prepare_s: f64,
        gen_s: f64,
        logprob_s: f64,
        train_s: f64,
    ) -> Result<Self, AnalyticError> {
        let times = StageTimes { data_s, prepare_s, gen_s, logprob_s, train_s };
        times.validate()?;
        Ok(times)
    }

    pub fn validate(&self) -> Result<(), AnalyticError> {
        for (name, value) in self.named() {
            if !value.is_finite() || value < 0.0 {
                return Err(AnalyticError::BadStageTime { name, value });
            }
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("data_s", self.data_s),
            ("prepare_s", self.prepare_s),
            ("gen_s", self.gen_s),
            ("logprob_s", self.logprob_s),
            ("train_s", self.train_s),
        ]
    }

    pub fn total_s(&self) -> f64 {
        self.data_s + self.prepare_s + self.gen_s + self.logprob_s + self.train_s
    }

    /// Everything except generation; the part speculation cannot touch.
    pub fn non_gen_s(&self) -> f64 {
        self.data_s + self.prepare_s + self.logprob_s + self.train_s
    }

    /// Returns a copy with generation time divided by `speedup`.
    pub fn with_gen_speedup(&self, speedup: f64) -> StageTimes {
        StageTimes { gen_s: self.gen_s / speedup, ..*self }
    }
}

/// Fraction of the step spent in rollout generation.
pub fn generation_share(times: &StageTimes) -> Result<f64, AnalyticError> {
    times.validate()?;
    let total = times.total_s();
    if total == 0.0 {
        return Err(AnalyticError::ZeroTotal);
    }
    Ok(times.gen_s / total)
}

/// Ceiling on end-to-end step speedup when only the generation fraction
/// `r_gen` of the step is accelerated by a factor `alpha`.
///
/// Callers must supply `r_gen` in `[0, 1]` and `alpha >= 1`.
pub fn amdahl_step_bound(r_gen: f64, alpha: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&r_gen), "r_gen {r_gen} outside [0, 1]");
    debug_assert!(alpha >= 1.0, "alpha {alpha} below 1");
    1.0 / (r_gen / alpha + (1.0 - r_gen))
}

/// Ratio of total step times, baseline over accelerated.
pub fn step_speedup(baseline: &StageTimes, accelerated: &StageTimes) -> Result<f64, AnalyticError> {
    baseline.validate()?;
    accelerated.validate()?;
    let denom = accelerated.total_s();
    if denom == 0.0 {
        return Err(AnalyticError::ZeroTotal);
    }
    Ok(baseline.total_s() / denom)
}

/// Expected emitted tokens per cycle (bonus token included) when each of the
/// `k` draft positions is accepted independently with probability `beta`:
/// `1 + beta + beta^2 + ... + beta^k`, which is `k + 1` at `beta = 1`.
pub fn expected_alpha_iid(beta: f64, k: usize) -> f64 {
    debug_assert!((0.0..=1.0).contains(&beta), "beta {beta} outside [0, 1]");
    debug_assert!(k >= 1);
    let mut term = 1.0;
    let mut sum = 1.0;
    for _ in 0..k {
        term *= beta;
        sum += term;
    }
    sum
}

/// Tolerance for the bisection in [`invert_alpha_to_beta`].
pub const ALPHA_INVERSION_TOLERANCE: f64 = 1e-10;

/// Finds the `beta` whose i.i.d. acceptance process yields expected emitted
/// length `alpha` at draft length `k`, by bisection on the monotone map
/// `beta -> expected_alpha_iid(beta, k)`.
pub fn invert_alpha_to_beta(alpha: f64, k: usize) -> Result<f64, AnalyticError> {
    if k == 0 {
        return Err(AnalyticError::ZeroDraftLength);
    }
    let max = (k + 1) as f64;
    if !alpha.is_finite() || alpha < 1.0 || alpha > max {
        return Err(AnalyticError::AlphaOutOfRange { alpha, k, max });
    }
    // The endpoints are exact fixed points of the forward map; returning them
    // directly keeps always-accept / never-accept processes exact instead of
    // within bisection tolerance.
    if alpha == 1.0 {
        return Ok(0.0);
    }
    if alpha == max {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    loop {
        let mid = 0.5 * (lo + hi);
        let value = expected_alpha_iid(mid, k);
        if (value - alpha).abs() <= ALPHA_INVERSION_TOLERANCE {
            return Ok(mid);
        }
        if value < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < f64::EPSILON {
            return Ok(mid);
        }
    }
}

/// Stochastic process generating per-cycle emitted lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceModel {
    /// Each draft position is accepted independently with probability `beta`.
    Iid { beta: f64 },
    /// Empirical histogram over emitted lengths: `weights[i]` is the relative
    /// frequency of emitting `i + 1` tokens in a cycle.
    Histogram { weights: Vec<f64> },
}

impl AcceptanceModel {
    /// Always-accept process: every cycle emits `k + 1` tokens.
    pub fn always_accept() -> Self {
        AcceptanceModel::Iid { beta: 1.0 }
    }

    pub fn validate(&self, k: usize) -> Result<(), AnalyticError> {
        if k == 0 {
            return Err(AnalyticError::ZeroDraftLength);
        }
        match self {
            AcceptanceModel::Iid { beta } => {
                if !beta.is_finite() || !(0.0..=1.0).contains(beta) {
                    return Err(AnalyticError::BetaOutOfRange(*beta));
                }
            }
            AcceptanceModel::Histogram { weights } => {
                if weights.is_empty()
                    || weights.iter().any(|w| !w.is_finite() || *w < 0.0)
                    || weights.iter().sum::<f64>() <= 0.0
                {
                    return Err(AnalyticError::DegenerateHistogram);
                }
                if weights.len() > k + 1 {
                    return Err(AnalyticError::HistogramTooLong {
                        len: weights.len(),
                        k,
                        max: k + 1,
                    });
                }
            }
        }
        Ok(())
    }

    /// Maps one uniform draw to an emitted length in `[1, k + 1]`.
    ///
    /// For the i.i.d. process this inverts the geometric CDF, so at a fixed
    /// draw the emitted length is nondecreasing in `beta`; simulations that
    /// reuse draws across `beta` values inherit exact monotone coupling.
    pub fn sample_emitted(&self, k: usize, u: f64) -> usize {
        debug_assert!((0.0..1.0).contains(&u));
        match self {
            AcceptanceModel::Iid { beta } => {
                if *beta <= 0.0 {
                    return 1;
                }
                if *beta >= 1.0 {
                    return k + 1;
                }
                // Successes before first failure: P(X >= j) = beta^j.
                let x = (u.ln() / beta.ln()).floor();
                let accepted = if x >= k as f64 { k } else { x as usize };
                accepted + 1
            }
            AcceptanceModel::Histogram { weights } => {
                let total: f64 = weights.iter().sum();
                let target = u * total;
                let mut cumulative = 0.0;
                for (index, &w) in weights.iter().enumerate() {
                    if w > 0.0 {
                        cumulative += w;
                        if target < cumulative {
                            return (index + 1).min(k + 1);
                        }
                    }
                }
                let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                (last + 1).min(k + 1)
            }
        }
    }

    /// Expected emitted length per cycle at draft length `k`.
    pub fn expected_emitted(&self, k: usize) -> f64 {
        match self {
            AcceptanceModel::Iid { beta } => expected_alpha_iid(*beta, k),
            AcceptanceModel::Histogram { weights } => {
                let total: f64 = weights.iter().sum();
                weights
                    .iter()
                    .enumerate()
                    .map(|(index, &w)| (index + 1) as f64 * w / total)
                    .sum()
            }
        }
    }
}
