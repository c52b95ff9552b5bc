//! Cycle-level instance simulation and rollout aggregation.

use super::{RolloutError, RolloutPlan, SpeculationConfig};
use crate::cost::StepCost;
use crate::rng::{counter_uniform, Substream};
use crate::rollout::{sample_lengths, LengthDistribution};
use rayon::prelude::*;
use serde::Serialize;

/// Substream label for response-length sampling.
const STREAM_LENGTHS: u64 = 1;
/// Substream label for per-(sequence, cycle) acceptance draws.
const STREAM_ACCEPT: u64 = 2;

/// One sequence as the simulator sees it: a globally unique id (which keys
/// its acceptance draws) and a response length in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceTask {
    pub id: u64,
    pub length: usize,
}

/// Point on a step function of live decoding sequences over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OccupancySample {
    pub time_s: f64,
    pub live_sequences: usize,
}

/// Telemetry from one instance's rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRun {
    /// Prefill plus every decode cycle, until the last sequence finishes.
    pub latency_s: f64,
    /// Decode (or verify) cycles executed.
    pub cycles: u64,
    /// Sum over cycles of the live batch size; the denominator of mean
    /// emitted tokens per sequence-cycle.
    pub sequence_cycles: u64,
    pub emitted_tokens: u64,
    /// Live-count step function, starting at (0, local_batch).
    pub occupancy: Vec<OccupancySample>,
}

/// Aggregated result of one rollout phase.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub per_instance_latency_s: Vec<f64>,
    /// The straggler instance's latency: the phase ends when the last
    /// instance drains.
    pub rollout_latency_s: f64,
    pub total_decode_cycles: u64,
    /// Emitted tokens per sequence-cycle: exactly 1 without speculation,
    /// within [1, k + 1] with it.
    pub mean_alpha: f64,
    pub total_emitted_tokens: u64,
    pub total_sampled_tokens: u64,
    /// Live sequences across all instances over time.
    pub occupancy_curve: Vec<OccupancySample>,
}

/// Simulates one instance draining its local batch.
///
/// Acceptance draws are `counter_uniform(seed, [stream, sequence id, cycle])`,
/// so a sequence's trajectory does not depend on which instance runs it or on
/// what else shares the batch.
pub fn simulate_instance(
    seed: u64,
    tasks: &[SequenceTask],
    prompt_tokens: usize,
    cost: &dyn StepCost,
    speculation: Option<&SpeculationConfig>,
) -> Result<InstanceRun, RolloutError> {
    if tasks.is_empty() {
        return Err(RolloutError::EmptyInstance);
    }
    debug_assert!(tasks.iter().all(|t| t.length >= 1));
    if let Some(config) = speculation {
        config.validate()?;
    }
    let prefill_s = tasks.len() as f64 * cost.prefill_s_per_prompt(prompt_tokens);
    match speculation {
        Some(config) => Ok(run_speculative(seed, tasks, prefill_s, cost, config)),
        None => Ok(run_baseline(tasks, prefill_s, cost)),
    }
}

fn run_speculative(
    seed: u64,
    tasks: &[SequenceTask],
    prefill_s: f64,
    cost: &dyn StepCost,
    config: &SpeculationConfig,
) -> InstanceRun {
    let k = config.draft_len;
    let mut live: Vec<(u64, usize)> = tasks.iter().map(|t| (t.id, t.length)).collect();
    let mut occupancy = vec![OccupancySample { time_s: 0.0, live_sequences: live.len() }];
    let mut time_s = prefill_s;
    let (mut cycles, mut sequence_cycles, mut emitted_tokens) = (0u64, 0u64, 0u64);
    let mut cycle_index = 0u64;
    while !live.is_empty() {
        let batch = live.len();
        time_s += cost.verify_step_s(batch, k)
            + cost.draft_step_s(batch, k)
            + config.per_cycle_overhead_s;
        cycles += 1;
        sequence_cycles += batch as u64;
        live.retain_mut(|(id, remaining)| {
            let u = counter_uniform(seed, &[STREAM_ACCEPT, *id, cycle_index]);
            // The verify pass runs before anyone knows the sequence would
            // have finished, so a full cycle is paid even when the emitted
            // count is capped at the remaining length.
            let emitted = config.acceptance.sample_emitted(k, u).min(*remaining);
            emitted_tokens += emitted as u64;
            *remaining -= emitted;
            *remaining > 0
        });
        cycle_index += 1;
        if live.len() != batch {
            occupancy.push(OccupancySample { time_s, live_sequences: live.len() });
        }
    }
    InstanceRun { latency_s: time_s, cycles, sequence_cycles, emitted_tokens, occupancy }
}

/// Baseline decoding advances every live sequence by exactly one token per
/// cycle, so the live count only changes at the distinct length values. The
/// run is evaluated group-by-group instead of cycle-by-cycle; the cycle
/// arithmetic is identical, only the f64 summation is batched.
fn run_baseline(tasks: &[SequenceTask], prefill_s: f64, cost: &dyn StepCost) -> InstanceRun {
    let mut lengths: Vec<usize> = tasks.iter().map(|t| t.length).collect();
    lengths.sort_unstable();
    let n = lengths.len();
    let mut occupancy = vec![OccupancySample { time_s: 0.0, live_sequences: n }];
    let mut time_s = prefill_s;
    let (mut cycles, mut sequence_cycles, mut emitted_tokens) = (0u64, 0u64, 0u64);
    let mut reached = 0usize;
    let mut index = 0usize;
    while index < n {
        let target = lengths[index];
        let live = n - index;
        let steps = (target - reached) as u64;
        if steps > 0 {
            time_s += steps as f64 * cost.decode_step_s(live);
            cycles += steps;
            sequence_cycles += steps * live as u64;
            emitted_tokens += steps * live as u64;
            reached = target;
        }
        while index < n && lengths[index] == target {
            index += 1;
        }
        occupancy.push(OccupancySample { time_s, live_sequences: n - index });
    }
    InstanceRun { latency_s: time_s, cycles, sequence_cycles, emitted_tokens, occupancy }
}

/// Samples lengths, partitions them round-robin, simulates every instance,
/// and aggregates. Instances run in parallel when a rayon pool is active;
/// results are identical to sequential execution because every instance is a
/// pure function of (seed, its tasks) and aggregation is order-independent.
pub fn simulate_rollout(
    plan: &RolloutPlan,
    dist: &LengthDistribution,
    cost: &dyn StepCost,
    seed: u64,
) -> Result<RolloutResult, RolloutError> {
    plan.validate()?;
    let mut length_rng = Substream::new(seed, &[STREAM_LENGTHS]).rng();
    let lengths = sample_lengths(dist, plan.global_batch, &mut length_rng)?;
    let runs: Vec<InstanceRun> = (0..plan.num_instances)
        .into_par_iter()
        .map(|instance| {
            let tasks: Vec<SequenceTask> = plan
                .instance_sequences(instance)
                .map(|s| SequenceTask { id: s as u64, length: lengths[s] })
                .collect();
            simulate_instance(seed, &tasks, plan.prompt_tokens, cost, plan.speculation.as_ref())
        })
        .collect::<Result<_, _>>()?;

    let per_instance_latency_s: Vec<f64> = runs.iter().map(|r| r.latency_s).collect();
    let rollout_latency_s = per_instance_latency_s.iter().cloned().fold(0.0, f64::max);
    let total_emitted_tokens: u64 = runs.iter().map(|r| r.emitted_tokens).sum();
    let total_sampled_tokens: u64 = lengths.iter().map(|&l| l as u64).sum();
    debug_assert_eq!(total_emitted_tokens, total_sampled_tokens);
    let sequence_cycles: u64 = runs.iter().map(|r| r.sequence_cycles).sum();
    Ok(RolloutResult {
        rollout_latency_s,
        per_instance_latency_s,
        total_decode_cycles: runs.iter().map(|r| r.cycles).sum(),
        mean_alpha: total_emitted_tokens as f64 / sequence_cycles as f64,
        total_emitted_tokens,
        total_sampled_tokens,
        occupancy_curve: merge_occupancy(runs.iter().map(|r| r.occupancy.as_slice())),
    })
}

/// Merges per-instance live-count step functions into one global curve.
fn merge_occupancy<'a>(curves: impl Iterator<Item = &'a [OccupancySample]>) -> Vec<OccupancySample> {
    let curves: Vec<&[OccupancySample]> = curves.collect();
    let mut times: Vec<f64> =
        curves.iter().flat_map(|c| c.iter().map(|s| s.time_s)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut cursors = vec![0usize; curves.len()];
    let mut merged = Vec::with_capacity(times.len());
    for t in times {
        let mut live = 0usize;
        for (curve, cursor) in curves.iter().zip(cursors.iter_mut()) {
            while *cursor + 1 < curve.len() && curve[*cursor + 1].time_s <= t {
                *cursor += 1;
            }
            live += curve[*cursor].live_sequences;
        }
        merged.push(OccupancySample { time_s: t, live_sequences: live });
    }
    merged
}
