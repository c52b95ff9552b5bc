//! Event engine for the two-pool asynchronous schedule.
//!
//! Generation and training advance as two serial timelines coupled by two
//! constraints: the trainer consumes batches in order, and batch i may only
//! be generated once weights version max(0, i - max_policy_lag) has been
//! published. Version v becomes available weight_transfer_s after step v - 1
//! completes; version 0 is available at time zero. A batch always runs with
//! the newest version available at its start, so the lag bound is a worst
//! case, not the typical distance.

use super::{
    check_steps, effective_step_s, PipelineConfig, PipelineError, PipelineMode, PipelineTrace,
    Pool, Stage, StageSpan,
};
use crate::analytic::StageTimes;

/// Executes the two-pool schedule and reports per-step exposure, the weights
/// version each batch ran with, and steady-state step time.
pub fn run_async(
    config: &PipelineConfig,
    steps: &[StageTimes],
) -> Result<PipelineTrace, PipelineError> {
    config.validate()?;
    if config.mode != PipelineMode::AsyncNoncolocated {
        return Err(PipelineError::WrongMode {
            expected: PipelineMode::AsyncNoncolocated,
            got: config.mode,
        });
    }
    check_steps(config, steps)?;
    run_engine(config, steps, false)
}

/// Same event engine, degenerate schedule: generation runs on the training
/// pool between prepare and logprob, so the result must agree with the serial
/// compositor span for span. Exists to cross-check the engine; not part of
/// the modeled design space.
#[cfg(test)]
pub(crate) fn run_collapsed(
    config: &PipelineConfig,
    steps: &[StageTimes],
) -> Result<PipelineTrace, PipelineError> {
    check_steps(config, steps)?;
    run_engine(config, steps, true)
}

fn run_engine(
    config: &PipelineConfig,
    steps: &[StageTimes],
    collapsed: bool,
) -> Result<PipelineTrace, PipelineError> {
    let n = steps.len();
    let lag = config.max_policy_lag as usize;
    let mut spans = Vec::with_capacity(n * 5);
    let mut step_end_s = Vec::with_capacity(n);
    let mut exposed = Vec::with_capacity(n);
    let mut versions = Vec::with_capacity(n);
    // publish_s[v]: when weights version v can first be used for generation.
    let mut publish_s = Vec::with_capacity(n + 1);
    publish_s.push(0.0f64);
    let mut gen_cursor = 0.0f64;
    let mut train_cursor = 0.0f64;

    for (i, times) in steps.iter().enumerate() {
        let step = i as u32;
        if collapsed {
            // Serial order on one pool: data, prepare, generation, logprob,
            // train. The additions below must mirror the sync compositor
            // exactly, term for term, so equality checks can be bitwise.
            let mut push = |stage: Stage, duration: f64, cursor: &mut f64| {
                let start_s = *cursor;
                *cursor += duration;
                spans.push(StageSpan {
                    step,
                    stage,
                    pool: Pool::Training,
                    start_s,
                    end_s: *cursor,
                    policy_version: i as i64,
                });
            };
            push(Stage::Data, times.data_s, &mut train_cursor);
            push(Stage::Prepare, times.prepare_s, &mut train_cursor);
            push(Stage::Generation, times.gen_s, &mut train_cursor);
            push(Stage::Logprob, times.logprob_s, &mut train_cursor);
            push(Stage::Train, times.train_s, &mut train_cursor);
            exposed.push(times.gen_s);
            versions.push(i as i64);
            step_end_s.push(train_cursor);
            publish_s.push(train_cursor + config.weight_transfer_s);
            continue;
        }

        // Generation pool: wait for the oldest admissible version, then run.
        let required_version = i.saturating_sub(lag);
        let gen_start = gen_cursor.max(publish_s[required_version]);
        let gen_end = gen_start + times.gen_s;
        gen_cursor = gen_end;
        let version_used = newest_version_at(&publish_s, gen_start);
        spans.push(StageSpan {
            step,
            stage: Stage::Generation,
            pool: Pool::Generation,
            start_s: gen_start,
            end_s: gen_end,
            policy_version: version_used,
        });
        versions.push(version_used);

        // Training pool: data prep overlaps generation; the remainder waits
        // for the batch.
        let data_start = train_cursor;
        let data_end = data_start + times.data_s;
        spans.push(StageSpan {
            step,
            stage: Stage::Data,
            pool: Pool::Training,
            start_s: data_start,
            end_s: data_end,
            policy_version: i as i64,
        });
        let logprob_start = data_end.max(gen_end);
        exposed.push((gen_end - data_end).max(0.0));
        let logprob_end = logprob_start + times.logprob_s;
        let train_end = logprob_end + times.train_s;
        let prepare_end = train_end + times.prepare_s;
        spans.push(StageSpan {
            step,
            stage: Stage::Logprob,
            pool: Pool::Training,
            start_s: logprob_start,
            end_s: logprob_end,
            policy_version: i as i64,
        });
        spans.push(StageSpan {
            step,
            stage: Stage::Train,
            pool: Pool::Training,
            start_s: logprob_end,
            end_s: train_end,
            policy_version: i as i64,
        });
        spans.push(StageSpan {
            step,
            stage: Stage::Prepare,
            pool: Pool::Training,
            start_s: train_end,
            end_s: prepare_end,
            policy_version: (i + 1) as i64,
        });
        train_cursor = prepare_end;
        step_end_s.push(prepare_end);
        publish_s.push(prepare_end + config.weight_transfer_s);
    }

    let makespan_s = step_end_s.last().copied().unwrap_or(0.0).max(gen_cursor);
    let effective = effective_step_s(&step_end_s, config.warmup_steps);
    Ok(PipelineTrace {
        mode: config.mode,
        spans,
        per_step_exposed_gen_s: exposed,
        policy_version_used: versions,
        step_end_s,
        makespan_s,
        effective_step_s: effective,
        warmup_steps: config.warmup_steps,
    })
}

fn newest_version_at(publish_s: &[f64], t: f64) -> i64 {
    let mut newest = 0;
    for (v, &at) in publish_s.iter().enumerate() {
        if at <= t {
            newest = v as i64;
        }
    }
    newest
}

/// Steady-state seconds per rollout batch for a standalone generation pool
/// whose instances must refresh weights between batches.
///
/// Instance j starts batch b once it finished batch b - 1 and version
/// max(0, b - max_policy_lag) has been broadcast; version v goes out
/// weight_update_s after every instance finished batch v - 1. Train-side
/// compute is taken as fully overlapped, so the period isolates how weight
/// distribution dilutes generation throughput: lag 0 serializes every
/// broadcast, lag >= 1 progressively hides it behind generation itself.
pub fn generation_pool_period_s(
    per_instance_gen_s: &[f64],
    weight_update_s: f64,
    max_policy_lag: u32,
    num_batches: usize,
    warmup_batches: usize,
) -> Result<f64, PipelineError> {
    if per_instance_gen_s.is_empty() || num_batches == 0 {
        return Err(PipelineError::EmptySteps);
    }
    if warmup_batches >= num_batches {
        return Err(PipelineError::BadWarmup {
            warmup: warmup_batches as u32,
            steps: num_batches as u32,
        });
    }
    if !weight_update_s.is_finite() || weight_update_s < 0.0 {
        return Err(PipelineError::BadTransfer(weight_update_s));
    }
    for &g in per_instance_gen_s {
        if !g.is_finite() || g <= 0.0 {
            return Err(PipelineError::BadGenerationTime(g));
        }
    }
    let lag = max_policy_lag as usize;
    let mut instance_end = vec![0.0f64; per_instance_gen_s.len()];
    let mut batch_end = Vec::with_capacity(num_batches);
    for b in 0..num_batches {
        let available = match b.checked_sub(lag).and_then(|v| v.checked_sub(1)) {
            // Version b - lag needs batch b - lag - 1 complete, then one
            // broadcast.
            Some(prev) => batch_end[prev] + weight_update_s,
            None => 0.0,
        };
        let mut slowest = 0.0f64;
        for (end, gen) in instance_end.iter_mut().zip(per_instance_gen_s) {
            *end = end.max(available) + gen;
            slowest = slowest.max(*end);
        }
        batch_end.push(slowest);
    }
    Ok(effective_step_s(&batch_end, warmup_batches as u32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{compare_modes, effective_generation_share, run_sync};

    /// Pool-calibrated step breakdowns for a 16-node workload split 12
    /// generation / 4 training. Generation occupies its pool for 75.0 s per
    /// batch; the four train-side stages keep their measured colocated
    /// proportions but are scaled to fill 64.6 s of training-pool time.
    fn pool_baseline() -> StageTimes {
        scaled_train_side(75.0)
    }

    /// Same workload with accelerated rollouts (1.54x) and the accelerated
    /// run's train-side stages scaled by the same pool factor (62.9756 s
    /// busy).
    fn pool_accelerated() -> StageTimes {
        let c = 64.6 / 51.7;
        StageTimes::new(0.2 * c, 1.6 * c, 75.0 / 1.54, 18.1 * c, 30.5 * c).unwrap()
    }

    fn scaled_train_side(gen_s: f64) -> StageTimes {
        let c = 64.6 / 51.7;
        StageTimes::new(0.3 * c, 2.1 * c, gen_s, 17.9 * c, 31.4 * c).unwrap()
    }

    fn async_config(num_steps: u32) -> PipelineConfig {
        PipelineConfig {
            weight_transfer_s: 0.5,
            ..PipelineConfig::asynchronous(12, 4, 1, num_steps)
        }
    }

    #[test]
    fn collapsed_engine_matches_serial_compositor_exactly() {
        let steps: Vec<StageTimes> = (0..7)
            .map(|i| {
                let f = 1.0 + 0.13 * i as f64;
                StageTimes::new(0.31 * f, 2.17 * f, 99.3 / f, 17.9 * f, 31.4 / f).unwrap()
            })
            .collect();
        let sync = run_sync(&PipelineConfig::sync(7), &steps).unwrap();
        let collapsed = run_collapsed(&PipelineConfig::sync(7), &steps).unwrap();
        assert_eq!(sync.step_end_s, collapsed.step_end_s);
        assert_eq!(sync.makespan_s, collapsed.makespan_s);
        assert_eq!(sync.effective_step_s, collapsed.effective_step_s);
        assert_eq!(sync.per_step_exposed_gen_s, collapsed.per_step_exposed_gen_s);
        assert_eq!(sync.spans, collapsed.spans);
    }

    #[test]
    fn steady_state_matches_hand_recurrence() {
        // Uniform steps: once warm, each step adds
        // max(gen, non_gen) = 75.0 to the train-side clock, and the steady
        // exposure is gen - non_gen_overlap = 75.0 - 64.6 = 10.4.
        let config = async_config(12);
        let trace = run_async(&config, &vec![pool_baseline(); 12]).unwrap();
        assert!((trace.effective_step_s - 75.0).abs() < 1e-9, "{}", trace.effective_step_s);
        assert!((trace.steady_exposed_gen_s() - 10.4).abs() < 1e-9);
        let share = effective_generation_share(&trace);
        assert!((share - 10.4 / 75.0).abs() < 1e-6, "{share}");
        trace.validate_spans().unwrap();
    }

    #[test]
    fn accelerated_rollouts_hide_behind_training() {
        let config = async_config(12);
        let trace = run_async(&config, &vec![pool_accelerated(); 12]).unwrap();
        assert!(trace.steady_exposed_gen_s() <= 1.5, "{}", trace.steady_exposed_gen_s());
        let step = trace.effective_step_s;
        assert!((57.475..=63.525).contains(&step), "{step}");
    }

    #[test]
    fn async_gains_dilute_relative_to_sync() {
        let sync_config = PipelineConfig::sync(12);
        let config = async_config(12);
        let grid = compare_modes(
            &vec![pool_baseline(); 12],
            &vec![pool_accelerated(); 12],
            &sync_config,
            &config,
        )
        .unwrap();
        assert!(grid.async_speedup < grid.sync_speedup, "{grid:?}");
        assert!(grid.async_speedup > 1.0);
        // Per-mode steady steps behind the dilution claim.
        assert!((grid.async_baseline_step_s - 75.0).abs() < 1e-9);
        assert!((grid.sync_baseline_step_s - 139.6).abs() < 1e-9);
    }

    #[test]
    fn policy_lag_bound_holds_on_every_step() {
        for lag in 1..4u32 {
            let config = PipelineConfig {
                weight_transfer_s: 0.5,
                ..PipelineConfig::asynchronous(12, 4, lag, 16)
            };
            let steps: Vec<StageTimes> = (0..16)
                .map(|i| scaled_train_side(40.0 + 7.0 * (i % 5) as f64))
                .collect();
            let trace = run_async(&config, &steps).unwrap();
            for (i, &v) in trace.policy_version_used.iter().enumerate() {
                assert!(v >= i as i64 - lag as i64, "step {i} used version {v} at lag {lag}");
                assert!(v <= i as i64);
            }
            trace.validate_spans().unwrap();
        }
    }

    #[test]
    fn exposure_shrinks_with_faster_generation_and_larger_lag() {
        let exposures: Vec<f64> = [1.0, 1.3, 1.7, 2.5]
            .iter()
            .map(|speedup| {
                let steps = vec![scaled_train_side(75.0 / speedup); 10];
                run_async(&async_config(10), &steps).unwrap().steady_exposed_gen_s()
            })
            .collect();
        for pair in exposures.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "{exposures:?}");
        }

        let by_lag: Vec<f64> = (1..4)
            .map(|lag| {
                let config = PipelineConfig {
                    weight_transfer_s: 0.5,
                    ..PipelineConfig::asynchronous(12, 4, lag, 10)
                };
                let steps = vec![scaled_train_side(75.0); 10];
                run_async(&config, &steps).unwrap().steady_exposed_gen_s()
            })
            .collect();
        for pair in by_lag.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "{by_lag:?}");
        }
    }

    #[test]
    fn fully_hidden_generation_costs_nothing() {
        // Generation much faster than the train side: exposure hits zero and
        // the step time is the train-side total.
        let steps = vec![scaled_train_side(5.0); 8];
        let trace = run_async(&async_config(8), &steps).unwrap();
        assert_eq!(trace.steady_exposed_gen_s(), 0.0);
        assert!((trace.effective_step_s - 64.6).abs() < 1e-9);
    }

    #[test]
    fn generation_bound_pipeline_tracks_generation_time() {
        // Generation much slower: steady step time equals gen time, and the
        // training pool idles the difference.
        let steps = vec![scaled_train_side(200.0); 8];
        let trace = run_async(&async_config(8), &steps).unwrap();
        assert!((trace.effective_step_s - 200.0).abs() < 1e-9);
        assert!((trace.steady_exposed_gen_s() - (200.0 - 64.6)).abs() < 1e-9);
        assert!(trace.pool_idle_s(Pool::Training) > 0.0);
    }

    #[test]
    fn zero_generation_time_makes_modes_agree() {
        let times = StageTimes::new(0.4, 1.9, 0.0, 16.8, 30.2).unwrap();
        let grid = compare_modes(
            &vec![times; 10],
            &vec![times; 10],
            &PipelineConfig::sync(10),
            &async_config(10),
        )
        .unwrap();
        let cells = [
            grid.sync_baseline_step_s,
            grid.sync_accelerated_step_s,
            grid.async_baseline_step_s,
            grid.async_accelerated_step_s,
        ];
        for cell in cells {
            assert!((cell - cells[0]).abs() < 1e-12 * cells[0], "{cells:?}");
        }
    }

    #[test]
    fn busy_and_idle_partition_both_pools() {
        let config = async_config(9);
        let steps: Vec<StageTimes> =
            (0..9).map(|i| scaled_train_side(60.0 + 3.0 * i as f64)).collect();
        let trace = run_async(&config, &steps).unwrap();
        for pool in [Pool::Training, Pool::Generation] {
            let busy = trace.pool_busy_s(pool);
            let idle = trace.pool_idle_s(pool);
            assert!(busy >= 0.0 && idle >= 0.0);
            assert!((busy + idle - trace.makespan_s).abs() < 1e-9);
        }
    }

    #[test]
    fn pool_period_serializes_broadcast_at_lag_zero() {
        let gens = vec![16.0; 8];
        let period = generation_pool_period_s(&gens, 3.0, 0, 40, 4).unwrap();
        assert!((period - 19.0).abs() < 1e-9, "{period}");
    }

    #[test]
    fn pool_period_hides_broadcast_with_lag() {
        let gens = vec![16.0; 8];
        let lag1 = generation_pool_period_s(&gens, 3.0, 1, 40, 4).unwrap();
        assert!((lag1 - 16.0).abs() < 1e-9, "{lag1}");
        // Broadcast longer than a batch: lag 1 still pays half the overhang.
        let heavy = generation_pool_period_s(&gens, 40.0, 1, 40, 4).unwrap();
        assert!((heavy - 28.0).abs() < 1e-9, "{heavy}");
        let recovered = generation_pool_period_s(&gens, 40.0, 3, 40, 4).unwrap();
        assert!((recovered - 16.0).abs() < 1e-9, "{recovered}");
    }

    #[test]
    fn pool_period_straggler_sets_the_pace() {
        let mut gens = vec![12.0; 7];
        gens.push(21.0);
        let period = generation_pool_period_s(&gens, 0.0, 2, 30, 3).unwrap();
        assert!((period - 21.0).abs() < 1e-9, "{period}");
    }

    #[test]
    fn pool_period_input_validation() {
        assert!(matches!(
            generation_pool_period_s(&[], 1.0, 1, 10, 2),
            Err(PipelineError::EmptySteps)
        ));
        assert!(matches!(
            generation_pool_period_s(&[1.0], -0.5, 1, 10, 2),
            Err(PipelineError::BadTransfer(_))
        ));
        assert!(matches!(
            generation_pool_period_s(&[1.0, 0.0], 0.5, 1, 10, 2),
            Err(PipelineError::BadGenerationTime(_))
        ));
        assert!(matches!(
            generation_pool_period_s(&[1.0], 0.5, 1, 10, 10),
            Err(PipelineError::BadWarmup { .. })
        ));
    }
}
