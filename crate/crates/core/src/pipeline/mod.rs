//! Step-level scheduling of RL training: synchronous serial steps, or a
//! two-pool asynchronous pipeline with bounded policy lag.
//!
//! ```text
//!   sync_colocated (one pool):
//!     step i:   [data|prepare|generation|logprob|train]
//!     step i+1:                                        [data|...]
//!
//!   async_noncolocated (two pools, max_policy_lag >= 1):
//!     gen pool:    [gen batch 0][gen batch 1][gen batch 2]...
//!     train pool:  [d|  wait  |logprob|train|prepare][d|logprob|...]
//!                      ^ exposed generation time: the only rollout time
//!                        the training critical path still sees
//! ```
//!
//! The training pool consumes batches strictly in step order; generation for
//! step i may not start before weights of version i - max_policy_lag have
//! been published (version v is published when step v - 1 finishes its
//! prepare stage, plus a fixed transfer latency). Reported step times are
//! steady-state: a warmup prefix is excluded so pipeline fill does not bias
//! the effective step time.

mod engine;

pub use engine::{generation_pool_period_s, run_async};

use crate::analytic::{AnalyticError, StageTimes};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("no steps to schedule")]
    EmptySteps,
    #[error("config declares {expected} steps but {got} stage-time entries were supplied")]
    StepCountMismatch { expected: usize, got: usize },
    #[error("operation requires {expected:?} mode, config says {got:?}")]
    WrongMode { expected: PipelineMode, got: PipelineMode },
    #[error("async_noncolocated requires max_policy_lag >= 1")]
    AsyncRequiresLag,
    #[error("sync_colocated requires max_policy_lag = 0, got {0}")]
    SyncRequiresZeroLag(u32),
    #[error("warmup_steps {warmup} must be smaller than num_steps {steps}")]
    BadWarmup { warmup: u32, steps: u32 },
    #[error("weight_transfer_s must be finite and non-negative, got {0}")]
    BadTransfer(f64),
    #[error("node counts must be at least 1")]
    ZeroNodes,
    #[error("per-instance generation time must be finite and positive, got {0}")]
    BadGenerationTime(f64),
    #[error("spans overlap on pool {pool:?} at step {step}")]
    OverlappingSpans { pool: Pool, step: u32 },
    #[error(transparent)]
    Stage(#[from] AnalyticError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    SyncColocated,
    AsyncNoncolocated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Data,
    Prepare,
    Generation,
    Logprob,
    Train,
}

impl Stage {
    pub fn label(&self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Prepare => "prepare",
            Stage::Generation => "generation",
            Stage::Logprob => "logprob",
            Stage::Train => "train",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Training,
    Generation,
}

impl Pool {
    pub fn label(&self) -> &'static str {
        match self {
            Pool::Training => "training",
            Pool::Generation => "generation",
        }
    }
}

/// One stage execution on one pool's timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageSpan {
    pub step: u32,
    pub stage: Stage,
    pub pool: Pool,
    pub start_s: f64,
    pub end_s: f64,
    /// Weights version the work ran with (generation) or produced (train).
    pub policy_version: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    pub gen_nodes: u32,
    pub train_nodes: u32,
    pub max_policy_lag: u32,
    pub num_steps: u32,
    #[serde(default = "default_warmup")]
    pub warmup_steps: u32,
    #[serde(default)]
    pub weight_transfer_s: f64,
}

fn default_warmup() -> u32 {
    2
}

impl PipelineConfig {
    pub fn sync(num_steps: u32) -> Self {
        PipelineConfig {
            mode: PipelineMode::SyncColocated,
            gen_nodes: 1,
            train_nodes: 1,
            max_policy_lag: 0,
            num_steps,
            warmup_steps: default_warmup().min(num_steps.saturating_sub(1)),
            weight_transfer_s: 0.0,
        }
    }

    pub fn asynchronous(gen_nodes: u32, train_nodes: u32, max_policy_lag: u32, num_steps: u32) -> Self {
        PipelineConfig {
            mode: PipelineMode::AsyncNoncolocated,
            gen_nodes,
            train_nodes,
            max_policy_lag,
            num_steps,
            warmup_steps: default_warmup().min(num_steps.saturating_sub(1)),
            weight_transfer_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.num_steps == 0 {
            return Err(PipelineError::EmptySteps);
        }
        if self.warmup_steps >= self.num_steps {
            return Err(PipelineError::BadWarmup {
                warmup: self.warmup_steps,
                steps: self.num_steps,
            });
        }
        if !self.weight_transfer_s.is_finite() || self.weight_transfer_s < 0.0 {
            return Err(PipelineError::BadTransfer(self.weight_transfer_s));
        }
        if self.gen_nodes == 0 || self.train_nodes == 0 {
            return Err(PipelineError::ZeroNodes);
        }
        match self.mode {
            PipelineMode::SyncColocated if self.max_policy_lag != 0 => {
                Err(PipelineError::SyncRequiresZeroLag(self.max_policy_lag))
            }
            PipelineMode::AsyncNoncolocated if self.max_policy_lag == 0 => {
                Err(PipelineError::AsyncRequiresLag)
            }
            _ => Ok(()),
        }
    }
}

/// Full schedule of one run: per-stage spans plus per-step summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineTrace {
    pub mode: PipelineMode,
    pub spans: Vec<StageSpan>,
    /// Training-pool wait attributable to rollouts, per step.
    pub per_step_exposed_gen_s: Vec<f64>,
    /// Weights version each step's rollout batch was generated with.
    pub policy_version_used: Vec<i64>,
    /// Training-side completion time of each step.
    pub step_end_s: Vec<f64>,
    pub makespan_s: f64,
    /// Steady-state seconds per step, excluding the warmup prefix.
    pub effective_step_s: f64,
    pub warmup_steps: u32,
}

impl PipelineTrace {
    pub fn num_steps(&self) -> usize {
        self.step_end_s.len()
    }

    /// Mean exposed generation time over the steady (post-warmup) steps.
    pub fn steady_exposed_gen_s(&self) -> f64 {
        let steady = &self.per_step_exposed_gen_s[self.warmup_steps as usize..];
        steady.iter().sum::<f64>() / steady.len() as f64
    }

    pub fn pool_busy_s(&self, pool: Pool) -> f64 {
        self.spans
            .iter()
            .filter(|s| s.pool == pool)
            .map(|s| s.end_s - s.start_s)
            .sum()
    }

    pub fn pool_idle_s(&self, pool: Pool) -> f64 {
        self.makespan_s - self.pool_busy_s(pool)
    }

    /// Checks that spans on each pool are chronologically disjoint.
    pub fn validate_spans(&self) -> Result<(), PipelineError> {
        for pool in [Pool::Training, Pool::Generation] {
            let mut spans: Vec<&StageSpan> =
                self.spans.iter().filter(|s| s.pool == pool).collect();
            spans.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
            for pair in spans.windows(2) {
                if pair[1].start_s < pair[0].end_s - 1e-12 {
                    return Err(PipelineError::OverlappingSpans { pool, step: pair[1].step });
                }
            }
        }
        Ok(())
    }
}

/// Steady-state step time from train-side completion times.
pub(crate) fn effective_step_s(step_end_s: &[f64], warmup: u32) -> f64 {
    let n = step_end_s.len();
    let w = warmup as usize;
    debug_assert!(w < n);
    let base = if w == 0 { 0.0 } else { step_end_s[w - 1] };
    (step_end_s[n - 1] - base) / (n - w) as f64
}

/// Executes steps serially on one colocated pool.
pub fn run_sync(config: &PipelineConfig, steps: &[StageTimes]) -> Result<PipelineTrace, PipelineError> {
    config.validate()?;
    if config.mode != PipelineMode::SyncColocated {
        return Err(PipelineError::WrongMode {
            expected: PipelineMode::SyncColocated,
            got: config.mode,
        });
    }
    check_steps(config, steps)?;
    let mut spans = Vec::with_capacity(steps.len() * 5);
    let mut step_end_s = Vec::with_capacity(steps.len());
    let mut exposed = Vec::with_capacity(steps.len());
    let mut versions = Vec::with_capacity(steps.len());
    let mut clock = 0.0f64;
    for (i, times) in steps.iter().enumerate() {
        let stage_plan = [
            (Stage::Data, times.data_s),
            (Stage::Prepare, times.prepare_s),
            (Stage::Generation, times.gen_s),
            (Stage::Logprob, times.logprob_s),
            (Stage::Train, times.train_s),
        ];
        for (stage, duration) in stage_plan {
            let start_s = clock;
            clock += duration;
            spans.push(StageSpan {
                step: i as u32,
                stage,
                pool: Pool::Training,
                start_s,
                end_s: clock,
                policy_version: i as i64,
            });
        }
        step_end_s.push(clock);
        exposed.push(times.gen_s);
        versions.push(i as i64);
    }
    let effective = effective_step_s(&step_end_s, config.warmup_steps);
    Ok(PipelineTrace {
        mode: PipelineMode::SyncColocated,
        spans,
        per_step_exposed_gen_s: exposed,
        policy_version_used: versions,
        makespan_s: clock,
        step_end_s,
        effective_step_s: effective,
        warmup_steps: config.warmup_steps,
    })
}

pub(crate) fn check_steps(
    config: &PipelineConfig,
    steps: &[StageTimes],
) -> Result<(), PipelineError> {
    if steps.len() != config.num_steps as usize {
        return Err(PipelineError::StepCountMismatch {
            expected: config.num_steps as usize,
            got: steps.len(),
        });
    }
    for times in steps {
        times.validate()?;
    }
    Ok(())
}

/// Fraction of the steady-state step the training critical path spends
/// waiting on generation. Synchronous runs reduce to the generation share of
/// the step breakdown.
pub fn effective_generation_share(trace: &PipelineTrace) -> f64 {
    if trace.effective_step_s == 0.0 {
        return 0.0;
    }
    trace.steady_exposed_gen_s() / trace.effective_step_s
}

/// Effective step times for {sync, async} x {baseline, accelerated} over the
/// same per-step workloads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeComparison {
    pub sync_baseline_step_s: f64,
    pub sync_accelerated_step_s: f64,
    pub async_baseline_step_s: f64,
    pub async_accelerated_step_s: f64,
    /// sync baseline / sync accelerated.
    pub sync_speedup: f64,
    /// async baseline / async accelerated.
    pub async_speedup: f64,
}

/// Runs the 2x2 grid. Stage times are taken as measured on whichever pool
/// runs them; the comparison isolates scheduling, so no node-count rescaling
/// is applied between modes.
pub fn compare_modes(
    baseline: &[StageTimes],
    accelerated: &[StageTimes],
    sync_config: &PipelineConfig,
    async_config: &PipelineConfig,
) -> Result<ModeComparison, PipelineError> {
    let sync_baseline = run_sync(sync_config, baseline)?.effective_step_s;
    let sync_accelerated = run_sync(sync_config, accelerated)?.effective_step_s;
    let async_baseline = run_async(async_config, baseline)?.effective_step_s;
    let async_accelerated = run_async(async_config, accelerated)?.effective_step_s;
    Ok(ModeComparison {
        sync_baseline_step_s: sync_baseline,
        sync_accelerated_step_s: sync_accelerated,
        async_baseline_step_s: async_baseline,
        async_accelerated_step_s: async_accelerated,
        sync_speedup: sync_baseline / sync_accelerated,
        async_speedup: async_baseline / async_accelerated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steps_of(times: StageTimes, n: usize) -> Vec<StageTimes> {
        vec![times; n]
    }

    /// Published step breakdown of a long-reasoning RL workload.
    fn think_baseline() -> StageTimes {
        StageTimes::new(0.3, 2.1, 133.6, 17.9, 31.4).unwrap()
    }

    fn think_accelerated() -> StageTimes {
        StageTimes::new(0.2, 1.6, 87.0, 18.1, 30.5).unwrap()
    }

    /// Published step breakdown of a short-response RL workload.
    fn zero_baseline() -> StageTimes {
        StageTimes::new(0.8, 1.1, 100.0, 18.3, 31.0).unwrap()
    }

    fn zero_accelerated() -> StageTimes {
        StageTimes::new(0.9, 1.2, 55.4, 18.7, 31.3).unwrap()
    }

    #[test]
    fn sync_single_step_totals_match_published_breakdowns() {
        let config = PipelineConfig { warmup_steps: 0, ..PipelineConfig::sync(1) };
        let ar = run_sync(&config, &steps_of(think_baseline(), 1)).unwrap();
        assert!((ar.makespan_s - 185.3).abs() < 1e-9, "{}", ar.makespan_s);
        let spec = run_sync(&config, &steps_of(zero_accelerated(), 1)).unwrap();
        assert!((spec.makespan_s - 107.5).abs() < 1e-9, "{}", spec.makespan_s);
        let base = run_sync(&config, &steps_of(zero_baseline(), 1)).unwrap();
        let speedup = base.makespan_s / spec.makespan_s;
        assert!((speedup - 1.407).abs() < 0.005, "{speedup}");
    }

    #[test]
    fn sync_zero_stages_give_zero_total() {
        let config = PipelineConfig { warmup_steps: 0, ..PipelineConfig::sync(3) };
        let zero = StageTimes::new(0.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        let trace = run_sync(&config, &steps_of(zero, 3)).unwrap();
        assert_eq!(trace.makespan_s, 0.0);
        assert_eq!(trace.effective_step_s, 0.0);
        assert_eq!(effective_generation_share(&trace), 0.0);
    }

    #[test]
    fn sync_share_equals_stage_generation_share() {
        let config = PipelineConfig::sync(6);
        let trace = run_sync(&config, &steps_of(think_baseline(), 6)).unwrap();
        let share = effective_generation_share(&trace);
        assert!((share - 0.721).abs() < 0.002, "{share}");
        trace.validate_spans().unwrap();
    }

    #[test]
    fn sync_rejects_wrong_mode_and_step_counts() {
        let config = PipelineConfig::asynchronous(12, 4, 1, 4);
        assert!(matches!(
            run_sync(&config, &steps_of(think_baseline(), 4)),
            Err(PipelineError::WrongMode { .. })
        ));
        let config = PipelineConfig::sync(4);
        assert_eq!(
            run_sync(&config, &steps_of(think_baseline(), 3)).unwrap_err(),
            PipelineError::StepCountMismatch { expected: 4, got: 3 }
        );
    }

    #[test]
    fn config_validation() {
        assert_eq!(
            PipelineConfig::asynchronous(12, 4, 0, 8).validate().unwrap_err(),
            PipelineError::AsyncRequiresLag
        );
        let mut sync = PipelineConfig::sync(8);
        sync.max_policy_lag = 2;
        assert_eq!(sync.validate().unwrap_err(), PipelineError::SyncRequiresZeroLag(2));
        let mut warm = PipelineConfig::sync(2);
        warm.warmup_steps = 2;
        assert_eq!(
            warm.validate().unwrap_err(),
            PipelineError::BadWarmup { warmup: 2, steps: 2 }
        );
        assert_eq!(PipelineConfig::sync(0).validate().unwrap_err(), PipelineError::EmptySteps);
    }

    #[test]
    fn busy_plus_idle_covers_makespan() {
        let config = PipelineConfig::sync(5);
        let trace = run_sync(&config, &steps_of(think_baseline(), 5)).unwrap();
        let busy = trace.pool_busy_s(Pool::Training);
        let idle = trace.pool_idle_s(Pool::Training);
        assert!((busy + idle - trace.makespan_s).abs() < 1e-9);
        assert!(idle.abs() < 1e-9, "sync training pool never idles");
    }

    #[test]
    fn amdahl_realized_speedup_under_bound() {
        use crate::analytic::{amdahl_step_bound, generation_share};
        let config = PipelineConfig { warmup_steps: 0, ..PipelineConfig::sync(1) };
        for (base, accel, alpha) in [
            (think_baseline(), think_accelerated(), 2.77),
            (zero_baseline(), zero_accelerated(), 3.32),
        ] {
            let base_trace = run_sync(&config, &steps_of(base, 1)).unwrap();
            let accel_trace = run_sync(&config, &steps_of(accel, 1)).unwrap();
            let realized = base_trace.makespan_s / accel_trace.makespan_s;
            let bound = amdahl_step_bound(generation_share(&base).unwrap(), alpha);
            assert!(realized <= bound, "realized {realized} > bound {bound}");
        }
    }
}
