//! Batch-level simulation of one rollout generation phase.
//!
//! A rollout phase decodes a fixed set of prompts to completion across some
//! number of identical model instances:
//!
//! ```text
//!   global batch ──round-robin──> instance 0: [seq 0, seq N, ...]
//!                                 instance 1: [seq 1, seq N+1, ...]
//!                                 ...
//!   per instance, per cycle:
//!     live batch = sequences still decoding
//!     cycle cost = verify(live, k) + draft(live, k) + overhead   (speculating)
//!                | decode(live)                                  (baseline)
//!     each live sequence advances by its sampled emitted tokens
//!   rollout latency = max over instances (the straggler sets the phase)
//! ```
//!
//! Response lengths are sampled once, before decoding mode is chosen, so a
//! baseline run and a speculative run over the same seed generate exactly the
//! same tokens; speculation changes only how many cycles they take. Acceptance
//! draws are keyed by (global sequence id, cycle), which makes results
//! independent of instance count, thread count, and evaluation order, and
//! couples runs across acceptance rates: raising the per-position acceptance
//! probability can only remove cycles, never add them.

mod lengths;
mod sim;

pub use lengths::{sample_lengths, LengthDistribution};
pub use sim::{
    simulate_instance, simulate_rollout, InstanceRun, OccupancySample, RolloutResult,
    SequenceTask,
};

use crate::analytic::{AcceptanceModel, AnalyticError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RolloutError {
    #[error("lognormal sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("lognormal mu must be finite, got {0}")]
    BadMu(f64),
    #[error("max_tokens must be at least 1")]
    ZeroMaxTokens,
    #[error("constant length must be at least 1")]
    ZeroConstantLength,
    #[error("empirical length sample set is empty")]
    EmptySamples,
    #[error("empirical length sample at index {index} is zero; lengths start at 1")]
    ZeroSample { index: usize },
    #[error("length file line {line}: {message}")]
    BadLengthLine { line: usize, message: String },
    #[error("global_batch must be at least 1")]
    EmptyBatch,
    #[error("num_instances must be at least 1")]
    ZeroInstances,
    #[error("global_batch {batch} smaller than num_instances {instances}")]
    MoreInstancesThanSequences { batch: usize, instances: usize },
    #[error("draft_len must be at least 1 when speculating")]
    ZeroDraftLen,
    #[error("per_cycle_overhead_s must be finite and non-negative, got {0}")]
    BadOverhead(f64),
    #[error("instance received no sequences")]
    EmptyInstance,
    #[error(transparent)]
    Acceptance(#[from] AnalyticError),
}

/// Speculative-decoding settings for a rollout phase.
///
/// The draft forward cost comes from the step-cost provider (as a fraction
/// of decode); `per_cycle_overhead_s` covers host-side work that does not
/// scale with the model, such as n-gram table lookup and proposal assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeculationConfig {
    pub draft_len: usize,
    pub acceptance: AcceptanceModel,
    #[serde(default)]
    pub per_cycle_overhead_s: f64,
}

impl SpeculationConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        if self.draft_len == 0 {
            return Err(RolloutError::ZeroDraftLen);
        }
        if !self.per_cycle_overhead_s.is_finite() || self.per_cycle_overhead_s < 0.0 {
            return Err(RolloutError::BadOverhead(self.per_cycle_overhead_s));
        }
        self.acceptance.validate(self.draft_len)?;
        Ok(())
    }
}

/// One rollout phase: how many sequences, over how many instances, with what
/// prompt length, decoded speculatively or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutPlan {
    pub global_batch: usize,
    pub num_instances: usize,
    pub prompt_tokens: usize,
    pub speculation: Option<SpeculationConfig>,
}

impl RolloutPlan {
    pub fn validate(&self) -> Result<(), RolloutError> {
        if self.global_batch == 0 {
            return Err(RolloutError::EmptyBatch);
        }
        if self.num_instances == 0 {
            return Err(RolloutError::ZeroInstances);
        }
        if self.global_batch < self.num_instances {
            return Err(RolloutError::MoreInstancesThanSequences {
                batch: self.global_batch,
                instances: self.num_instances,
            });
        }
        if let Some(speculation) = &self.speculation {
            speculation.validate()?;
        }
        Ok(())
    }

    /// Round-robin assignment: sequence s lands on instance s mod n, so
    /// local batches differ by at most one.
    pub fn instance_sequences(&self, instance: usize) -> impl Iterator<Item = usize> + '_ {
        (instance..self.global_batch).step_by(self.num_instances)
    }

    pub fn without_speculation(&self) -> RolloutPlan {
        RolloutPlan { speculation: None, ..self.clone() }
    }
}
