//! Per-kind cell evaluation.
//!
//! Every evaluator follows the same contract: semantic problems inside one
//! cell (an acceptance target above the emitted-length cap, a patched model
//! that no longer fits its GPUs, an instance count that does not divide the
//! pool) turn that cell infeasible with a human-readable reason; they never
//! abort the sweep. Only structural problems caught by validation stop a run.

use super::{
    NamedCurve, NamedTimeline, Sections, SpeculationSection, SweepCell, SweepError,
};
use crate::analytic::{
    amdahl_step_bound, expected_alpha_iid, generation_share, invert_alpha_to_beta, step_speedup,
    AcceptanceModel,
};
use crate::cost::{DeploymentProfile, ModelProfile, RooflineCost};
use crate::pipeline::{
    effective_generation_share, generation_pool_period_s, run_async, run_sync, PipelineConfig,
    PipelineMode,
};
use crate::rollout::{simulate_rollout, RolloutPlan, RolloutResult, SpeculationConfig};
use std::collections::BTreeMap;

/// Relative slack for the cross-checks between independently computed
/// quantities; covers f64 rounding only, not model error.
const CROSS_CHECK_SLACK: f64 = 1e-9;

/// Relative slack for the serial-fraction bound check. The realized
/// generation speedup of a finite batch can overshoot the modeled mean
/// acceptance length (the bound's input) by sampling noise, and the bound
/// inherits the overshoot; 2% covers the smallest simulated cells by a wide
/// margin while still catching real composition bugs.
const AMDAHL_CHECK_SLACK: f64 = 0.02;

fn require<'a, T>(option: &'a Option<T>, name: &str) -> Result<&'a T, String> {
    option.as_ref().ok_or_else(|| format!("[{name}] section is required but missing"))
}

/// Acceptance process plus its expected emitted length, from either
/// parameterization. A target above `k + 1` is unreachable by definition.
fn resolve_acceptance(
    speculation: &SpeculationSection,
) -> Result<(AcceptanceModel, f64), String> {
    let k = speculation.draft_len;
    match (speculation.target_alpha, speculation.beta) {
        (Some(alpha), None) => {
            let cap = (k + 1) as f64;
            if alpha > cap {
                return Err(format!(
                    "target_alpha {alpha} exceeds the emitted-length cap k + 1 = {cap} \
                     at draft_len {k}"
                ));
            }
            let beta = invert_alpha_to_beta(alpha, k).map_err(|e| e.to_string())?;
            Ok((AcceptanceModel::Iid { beta }, alpha))
        }
        (None, Some(beta)) => {
            if k == 0 {
                return Err("draft_len must be at least 1".into());
            }
            if !(0.0..=1.0).contains(&beta) {
                return Err(format!("beta {beta} outside [0, 1]"));
            }
            Ok((AcceptanceModel::Iid { beta }, expected_alpha_iid(beta, k)))
        }
        _ => Err("speculation requires exactly one of target_alpha or beta".into()),
    }
}

/// Deployment profile with the speculation section's draft-cost override
/// applied, if any.
fn profile_with_fraction(
    sections: &Sections,
    fraction: Option<f64>,
) -> Result<DeploymentProfile, String> {
    let hardware = require(&sections.hardware, "hardware")?.clone();
    let mut model: ModelProfile = require(&sections.model, "model")?.clone();
    let sharding = require(&sections.sharding, "sharding")?.clone();
    if let Some(fraction) = fraction {
        model.draft_cost_fraction = fraction;
    }
    Ok(DeploymentProfile { hardware, model, sharding })
}

/// Consistency checks between a cell's independently derived numbers. Active
/// in debug builds only; the quantities come from different code paths, so
/// agreement here is evidence rather than tautology.
///
/// `serial_step` marks cells whose end-to-end number composes stages in
/// series; only those obey the serial-fraction bound. An asynchronous step is
/// a maximum over pool periods, and speeding up a period-setting generation
/// pool speeds the whole step up one-for-one, past any serial bound.
fn assert_cell_invariants(cell: &SweepCell, serial_step: bool) {
    if let Some(measured) = cell.measured_alpha {
        debug_assert!(measured >= 1.0 - CROSS_CHECK_SLACK, "measured alpha {measured} below 1");
    }
    if let (Some(e2e), Some(rollout)) = (cell.e2e_speedup, cell.rollout_speedup) {
        // A generation speedup dilutes toward 1 when composed into a full
        // step, from either side: a gain shrinks, a loss shrinks too.
        if rollout >= 1.0 {
            debug_assert!(
                e2e <= rollout * (1.0 + CROSS_CHECK_SLACK),
                "end-to-end speedup {e2e} exceeds generation speedup {rollout}"
            );
        } else {
            debug_assert!(
                e2e <= 1.0 + CROSS_CHECK_SLACK,
                "end-to-end speedup {e2e} above 1 from a sub-unity generation speedup {rollout}"
            );
        }
    }
    if let (true, Some(e2e), Some(share), Some(alpha)) =
        (serial_step, cell.e2e_speedup, cell.generation_share, cell.alpha)
    {
        if (0.0..=1.0).contains(&share) && alpha >= 1.0 {
            let bound = amdahl_step_bound(share, alpha);
            debug_assert!(
                e2e <= bound * (1.0 + AMDAHL_CHECK_SLACK),
                "end-to-end speedup {e2e} exceeds serial-fraction bound {bound}"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// stage_replay
// ---------------------------------------------------------------------------

/// One row per workload: generation and whole-step speedups of a measured
/// accelerated breakdown over its baseline.
pub(super) fn stage_replay(sections: &Sections) -> Result<Vec<SweepCell>, SweepError> {
    let mut cells = Vec::with_capacity(sections.workload.len());
    for workload in &sections.workload {
        let mut inputs = BTreeMap::new();
        inputs.insert("workload".to_string(), workload.name.clone());
        let mut cell = SweepCell::feasible(inputs);
        let filled = (|| -> Result<(), String> {
            let config = PipelineConfig::sync(1);
            let baseline = run_sync(&config, &[workload.baseline]).map_err(|e| e.to_string())?;
            let accelerated =
                run_sync(&config, &[workload.accelerated]).map_err(|e| e.to_string())?;
            cell.alpha = workload.alpha;
            cell.rollout_speedup = if workload.accelerated.gen_s > 0.0 {
                Some(workload.baseline.gen_s / workload.accelerated.gen_s)
            } else {
                None
            };
            cell.e2e_speedup = Some(baseline.effective_step_s / accelerated.effective_step_s);
            cell.exposed_gen_s = Some(accelerated.steady_exposed_gen_s());
            cell.step_s = Some(accelerated.effective_step_s);
            cell.generation_share =
                Some(generation_share(&workload.baseline).map_err(|e| e.to_string())?);
            Ok(())
        })();
        if let Err(reason) = filled {
            cell = SweepCell::infeasible(cell.inputs, reason);
        }
        assert_cell_invariants(&cell, true);
        cells.push(cell);
    }
    Ok(cells)
}

// ---------------------------------------------------------------------------
// async_compare
// ---------------------------------------------------------------------------

/// Four rows per workload: {sync, async} x {baseline, accelerated}, each with
/// its settled step time and exposed generation. Speedups land on the
/// accelerated rows.
pub(super) fn async_compare(
    sections: &Sections,
    want_timelines: bool,
) -> Result<(Vec<SweepCell>, Vec<NamedTimeline>), SweepError> {
    let async_config = sections
        .pipeline
        .clone()
        .ok_or_else(|| SweepError::Scenario("[pipeline] section is required".into()))?;
    let sync_config = PipelineConfig {
        mode: PipelineMode::SyncColocated,
        max_policy_lag: 0,
        weight_transfer_s: 0.0,
        ..async_config.clone()
    };
    let mut cells = Vec::with_capacity(sections.workload.len() * 4);
    let mut timelines = Vec::new();
    for workload in &sections.workload {
        let mut step_of = BTreeMap::new();
        for (mode_name, config) in [("sync", &sync_config), ("async", &async_config)] {
            for (phase, times) in
                [("baseline", workload.baseline), ("accelerated", workload.accelerated)]
            {
                let mut inputs = BTreeMap::new();
                inputs.insert("workload".to_string(), workload.name.clone());
                inputs.insert("mode".to_string(), mode_name.to_string());
                inputs.insert("phase".to_string(), phase.to_string());
                let mut cell = SweepCell::feasible(inputs);
                let steps = vec![times; config.num_steps as usize];
                let trace = match config.mode {
                    PipelineMode::SyncColocated => run_sync(config, &steps),
                    PipelineMode::AsyncNoncolocated => run_async(config, &steps),
                };
                match trace {
                    Ok(trace) => {
                        cell.step_s = Some(trace.effective_step_s);
                        cell.exposed_gen_s = Some(trace.steady_exposed_gen_s());
                        cell.generation_share = Some(effective_generation_share(&trace));
                        if phase == "accelerated" {
                            cell.alpha = workload.alpha;
                            if times.gen_s > 0.0 {
                                cell.rollout_speedup =
                                    Some(workload.baseline.gen_s / times.gen_s);
                            }
                            if let Some(&baseline_step) = step_of.get(mode_name) {
                                cell.e2e_speedup =
                                    Some(baseline_step / trace.effective_step_s);
                            }
                        } else {
                            step_of.insert(mode_name, trace.effective_step_s);
                        }
                        if want_timelines {
                            timelines.push(NamedTimeline {
                                label: format!("{}_{mode_name}_{phase}", workload.name),
                                spans: trace.spans,
                            });
                        }
                    }
                    Err(err) => {
                        cell = SweepCell::infeasible(cell.inputs, err.to_string());
                    }
                }
                assert_cell_invariants(&cell, false);
                cells.push(cell);
            }
        }
    }
    Ok((cells, timelines))
}

// ---------------------------------------------------------------------------
// method_table
// ---------------------------------------------------------------------------

/// One row per drafting method against a shared autoregressive baseline.
///
/// All methods are simulated from the scenario seed, so every row decodes
/// exactly the same response lengths and differs only in cycle structure.
pub(super) fn method_table(
    sections: &Sections,
    seed: u64,
    want_curves: bool,
) -> Result<(Vec<SweepCell>, Vec<NamedCurve>), SweepError> {
    let deployment = sections
        .deployment
        .as_ref()
        .ok_or_else(|| SweepError::Scenario("[deployment] section is required".into()))?;
    let traffic = sections
        .traffic
        .as_ref()
        .ok_or_else(|| SweepError::Scenario("[traffic] section is required".into()))?;
    let base_plan = RolloutPlan {
        global_batch: deployment.global_batch,
        num_instances: deployment.num_instances,
        prompt_tokens: deployment.prompt_tokens,
        speculation: None,
    };
    let base_profile = profile_with_fraction(sections, None).map_err(SweepError::Scenario)?;
    let base_cost = RooflineCost::new(&base_profile)
        .map_err(|e| SweepError::Scenario(e.to_string()))?;
    let baseline = simulate_rollout(&base_plan, traffic, &base_cost, seed)
        .map_err(|e| SweepError::Scenario(e.to_string()))?;

    let mut curves = Vec::new();
    if want_curves {
        curves.push(NamedCurve {
            label: "baseline".to_string(),
            samples: baseline.occupancy_curve.clone(),
        });
    }
    let mut cells = Vec::with_capacity(sections.method.len());
    for method in &sections.method {
        let mut inputs = BTreeMap::new();
        inputs.insert("method".to_string(), method.name.clone());
        let mut cell = SweepCell::feasible(inputs);
        let filled = (|| -> Result<(), String> {
            let result = if method.draft_len == 0 {
                baseline.clone()
            } else {
                let profile = profile_with_fraction(sections, method.draft_cost_fraction)?;
                let cost = RooflineCost::new(&profile).map_err(|e| e.to_string())?;
                let speculation = SpeculationSection {
                    draft_len: method.draft_len,
                    target_alpha: Some(method.alpha),
                    beta: None,
                    per_cycle_overhead_s: method.per_cycle_overhead_s,
                    draft_cost_fraction: method.draft_cost_fraction,
                };
                let (acceptance, _) = resolve_acceptance(&speculation)?;
                let plan = RolloutPlan {
                    speculation: Some(SpeculationConfig {
                        draft_len: method.draft_len,
                        acceptance,
                        per_cycle_overhead_s: method.per_cycle_overhead_s,
                    }),
                    ..base_plan.clone()
                };
                simulate_rollout(&plan, traffic, &cost, seed).map_err(|e| e.to_string())?
            };
            cell.alpha = Some(method.alpha);
            cell.measured_alpha = Some(result.mean_alpha);
            cell.rollout_speedup = Some(baseline.rollout_latency_s / result.rollout_latency_s);
            fill_step_composition(sections, &baseline, &result, &mut cell)?;
            if want_curves && method.draft_len != 0 {
                curves.push(NamedCurve {
                    label: method.name.clone(),
                    samples: result.occupancy_curve.clone(),
                });
            }
            Ok(())
        })();
        if let Err(reason) = filled {
            cell = SweepCell::infeasible(cell.inputs, reason);
        }
        assert_cell_invariants(&cell, true);
        cells.push(cell);
    }
    Ok((cells, curves))
}

/// Composes rollout latencies into full training steps when the scenario
/// provides the other stage costs; otherwise the rollout itself is the step.
fn fill_step_composition(
    sections: &Sections,
    baseline: &RolloutResult,
    result: &RolloutResult,
    cell: &mut SweepCell,
) -> Result<(), String> {
    match &sections.step_stages {
        Some(stages) => {
            let base_times =
                stages.with_gen(baseline.rollout_latency_s).map_err(|e| e.to_string())?;
            let times = stages.with_gen(result.rollout_latency_s).map_err(|e| e.to_string())?;
            cell.e2e_speedup = Some(step_speedup(&base_times, &times).map_err(|e| e.to_string())?);
            cell.step_s = Some(times.total_s());
            cell.generation_share = Some(generation_share(&base_times).map_err(|e| e.to_string())?);
        }
        None => {
            cell.step_s = Some(result.rollout_latency_s);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// generation_grid
// ---------------------------------------------------------------------------

/// One speculative rollout against its coupled autoregressive baseline.
pub(super) fn generation_cell(
    sections: &Sections,
    seed: u64,
    inputs: BTreeMap<String, String>,
) -> SweepCell {
    let mut cell = SweepCell::feasible(inputs);
    let filled = (|| -> Result<(), String> {
        let deployment = require(&sections.deployment, "deployment")?;
        let traffic = require(&sections.traffic, "traffic")?;
        let speculation = require(&sections.speculation, "speculation")?;
        let (acceptance, alpha) = resolve_acceptance(speculation)?;
        let profile = profile_with_fraction(sections, speculation.draft_cost_fraction)?;
        let cost = RooflineCost::new(&profile).map_err(|e| e.to_string())?;
        let base_plan = RolloutPlan {
            global_batch: deployment.global_batch,
            num_instances: deployment.num_instances,
            prompt_tokens: deployment.prompt_tokens,
            speculation: None,
        };
        let spec_plan = RolloutPlan {
            speculation: Some(SpeculationConfig {
                draft_len: speculation.draft_len,
                acceptance,
                per_cycle_overhead_s: speculation.per_cycle_overhead_s,
            }),
            ..base_plan.clone()
        };
        let baseline =
            simulate_rollout(&base_plan, traffic, &cost, seed).map_err(|e| e.to_string())?;
        let result =
            simulate_rollout(&spec_plan, traffic, &cost, seed).map_err(|e| e.to_string())?;
        cell.alpha = Some(alpha);
        cell.measured_alpha = Some(result.mean_alpha);
        cell.rollout_speedup = Some(baseline.rollout_latency_s / result.rollout_latency_s);
        fill_step_composition(sections, &baseline, &result, &mut cell)
    })();
    if let Err(reason) = filled {
        cell = SweepCell::infeasible(cell.inputs, reason);
    }
    assert_cell_invariants(&cell, true);
    cell
}

// ---------------------------------------------------------------------------
// instance_lag_grid
// ---------------------------------------------------------------------------

/// Steady-state weight-broadcast time for a pool of `n` instances: one
/// interconnect transfer of the weights, repeated over a binary fan-out tree,
/// so doubling the pool adds one transfer rather than re-sending n times.
fn broadcast_s(profile: &DeploymentProfile, instances: u64) -> f64 {
    let hops = 1 + instances.next_power_of_two().trailing_zeros();
    profile.model.weights_bytes()
        / profile.hardware.interconnect_bandwidth_bytes_per_s
        * hops as f64
}

/// Resolves `deployment.gen_gpus` into an instance count for the configured
/// sharding layout.
fn pool_instances(sections: &Sections) -> Result<usize, String> {
    let deployment = require(&sections.deployment, "deployment")?;
    let sharding = require(&sections.sharding, "sharding")?;
    let gen_gpus =
        deployment.gen_gpus.ok_or("deployment.gen_gpus is required for pool sweeps")?;
    let per_instance = sharding.gpus_per_instance as u64;
    if per_instance == 0 || gen_gpus == 0 || gen_gpus % per_instance != 0 {
        return Err(format!(
            "gen_gpus {gen_gpus} is not divisible by gpus_per_instance {per_instance}"
        ));
    }
    Ok((gen_gpus / per_instance) as usize)
}

/// Sustained batch period of the generation pool, speculative over baseline,
/// under the configured staleness bound.
pub(super) fn instance_lag_cell(
    sections: &Sections,
    seed: u64,
    inputs: BTreeMap<String, String>,
) -> SweepCell {
    let mut cell = SweepCell::feasible(inputs);
    let filled = (|| -> Result<(), String> {
        let deployment = require(&sections.deployment, "deployment")?;
        let traffic = require(&sections.traffic, "traffic")?;
        let speculation = require(&sections.speculation, "speculation")?;
        let pool = require(&sections.pool_study, "pool_study")?;
        let instances = pool_instances(sections)?;
        let (acceptance, alpha) = resolve_acceptance(speculation)?;
        let profile = profile_with_fraction(sections, speculation.draft_cost_fraction)?;
        let cost = RooflineCost::new(&profile).map_err(|e| e.to_string())?;
        let base_plan = RolloutPlan {
            global_batch: deployment.global_batch,
            num_instances: instances,
            prompt_tokens: deployment.prompt_tokens,
            speculation: None,
        };
        let spec_plan = RolloutPlan {
            speculation: Some(SpeculationConfig {
                draft_len: speculation.draft_len,
                acceptance,
                per_cycle_overhead_s: speculation.per_cycle_overhead_s,
            }),
            ..base_plan.clone()
        };
        let baseline =
            simulate_rollout(&base_plan, traffic, &cost, seed).map_err(|e| e.to_string())?;
        let result =
            simulate_rollout(&spec_plan, traffic, &cost, seed).map_err(|e| e.to_string())?;
        let update_s = broadcast_s(&profile, instances as u64);
        let base_period = generation_pool_period_s(
            &baseline.per_instance_latency_s,
            update_s,
            pool.max_policy_lag,
            pool.num_batches,
            pool.warmup_batches,
        )
        .map_err(|e| e.to_string())?;
        let spec_period = generation_pool_period_s(
            &result.per_instance_latency_s,
            update_s,
            pool.max_policy_lag,
            pool.num_batches,
            pool.warmup_batches,
        )
        .map_err(|e| e.to_string())?;
        cell.alpha = Some(alpha);
        cell.measured_alpha = Some(result.mean_alpha);
        cell.rollout_speedup = Some(base_period / spec_period);
        cell.step_s = Some(spec_period);
        Ok(())
    })();
    if let Err(reason) = filled {
        cell = SweepCell::infeasible(cell.inputs, reason);
    }
    assert_cell_invariants(&cell, false);
    cell
}

// ---------------------------------------------------------------------------
// occupancy capture
// ---------------------------------------------------------------------------

/// Live-sequence curves of the unpatched base configuration, baseline and
/// speculative, for curve outputs of the grid kinds. A base configuration
/// whose pool shape only becomes feasible under axis patches yields no
/// curves rather than an error.
pub(super) fn base_occupancy(
    sections: &Sections,
    seed: u64,
) -> Result<Vec<NamedCurve>, SweepError> {
    let capture = (|| -> Result<Vec<NamedCurve>, String> {
        let deployment = require(&sections.deployment, "deployment")?;
        let traffic = require(&sections.traffic, "traffic")?;
        let speculation = require(&sections.speculation, "speculation")?;
        let instances = match deployment.gen_gpus {
            Some(_) => pool_instances(sections)?,
            None => deployment.num_instances,
        };
        let (acceptance, _) = resolve_acceptance(speculation)?;
        let profile = profile_with_fraction(sections, speculation.draft_cost_fraction)?;
        let cost = RooflineCost::new(&profile).map_err(|e| e.to_string())?;
        let base_plan = RolloutPlan {
            global_batch: deployment.global_batch,
            num_instances: instances,
            prompt_tokens: deployment.prompt_tokens,
            speculation: None,
        };
        let spec_plan = RolloutPlan {
            speculation: Some(SpeculationConfig {
                draft_len: speculation.draft_len,
                acceptance,
                per_cycle_overhead_s: speculation.per_cycle_overhead_s,
            }),
            ..base_plan.clone()
        };
        let baseline =
            simulate_rollout(&base_plan, traffic, &cost, seed).map_err(|e| e.to_string())?;
        let result =
            simulate_rollout(&spec_plan, traffic, &cost, seed).map_err(|e| e.to_string())?;
        Ok(vec![
            NamedCurve { label: "baseline".to_string(), samples: baseline.occupancy_curve },
            NamedCurve { label: "speculative".to_string(), samples: result.occupancy_curve },
        ])
    })();
    Ok(capture.unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::StageTimes;
    use crate::sweep::{Scenario, WorkloadSpec};

    fn workload(name: &str, alpha: f64, baseline: StageTimes, accel: StageTimes) -> WorkloadSpec {
        WorkloadSpec { name: name.to_string(), alpha: Some(alpha), baseline, accelerated: accel }
    }

    fn think_workload() -> WorkloadSpec {
        workload(
            "rl_think",
            2.77,
            StageTimes::new(0.3, 2.1, 133.6, 17.9, 31.4).unwrap(),
            StageTimes::new(0.2, 1.6, 87.0, 18.1, 30.5).unwrap(),
        )
    }

    #[test]
    fn stage_replay_reproduces_hand_arithmetic() {
        let sections = Sections { workload: vec![think_workload()], ..Sections::default() };
        let cells = stage_replay(&sections).unwrap();
        assert_eq!(cells.len(), 1);
        let cell = &cells[0];
        assert!(cell.feasible);
        assert_eq!(cell.inputs["workload"], "rl_think");
        let e2e = cell.e2e_speedup.unwrap();
        assert!((e2e - 185.3 / 137.4).abs() < 1e-12, "{e2e}");
        let rollout = cell.rollout_speedup.unwrap();
        assert!((rollout - 133.6 / 87.0).abs() < 1e-12, "{rollout}");
        let share = cell.generation_share.unwrap();
        assert!((share - 133.6 / 185.3).abs() < 1e-12, "{share}");
        assert_eq!(cell.step_s.unwrap(), 137.4);
    }

    fn calibrated_workload() -> WorkloadSpec {
        workload(
            "pool_calibrated",
            2.77,
            StageTimes::new(
                0.3748549323017408,
                2.6239845261121855,
                75.0,
                22.366344294003866,
                39.2348162475822,
            )
            .unwrap(),
            StageTimes::new(
                0.24990328820116053,
                1.9992263056092843,
                48.7012987012987,
                22.61624758220503,
                38.11025145067698,
            )
            .unwrap(),
        )
    }

    #[test]
    fn async_compare_produces_all_four_traces_per_workload() {
        let sections = Sections {
            workload: vec![calibrated_workload(), think_workload()],
            pipeline: Some(PipelineConfig::asynchronous(12, 4, 1, 12)),
            ..Sections::default()
        };
        let (cells, timelines) = async_compare(&sections, true).unwrap();
        assert_eq!(cells.len(), 8);
        assert_eq!(timelines.len(), 8);
        let cell = |name: &str, mode: &str, phase: &str| {
            cells
                .iter()
                .find(|c| {
                    c.inputs["workload"] == name
                        && c.inputs["mode"] == mode
                        && c.inputs["phase"] == phase
                })
                .unwrap()
        };

        // Calibrated workload: generation mostly hides behind training, so
        // the same generation gain buys less end to end in async than sync.
        let sync_accel = cell("pool_calibrated", "sync", "accelerated");
        let async_accel = cell("pool_calibrated", "async", "accelerated");
        assert!(async_accel.e2e_speedup.unwrap() < sync_accel.e2e_speedup.unwrap());
        let async_base = cell("pool_calibrated", "async", "baseline");
        assert!((async_base.step_s.unwrap() - 75.0).abs() < 1e-9);
        assert!((async_base.exposed_gen_s.unwrap() - 10.4).abs() < 1e-9);
        assert!(async_base.e2e_speedup.is_none());

        // Generation-dominant workload: the async step is generation-bound in
        // both phases, so it scales with the full rollout gain and beats the
        // diluted sync composition instead of trailing it.
        let think_async = cell("rl_think", "async", "accelerated");
        let think_sync = cell("rl_think", "sync", "accelerated");
        let e2e = think_async.e2e_speedup.unwrap();
        assert!((e2e - think_async.rollout_speedup.unwrap()).abs() < 1e-9, "{e2e}");
        assert!(e2e > think_sync.e2e_speedup.unwrap());

        for timeline in &timelines {
            assert!(!timeline.spans.is_empty());
        }
    }

    const POOL_TOML: &str = r#"
        [scenario]
        name = "pool"
        kind = "instance_lag_grid"

        [hardware]
        gpu_name = "test"
        hbm_bandwidth_bytes_per_s = 8.0e12
        peak_flops_per_s = 1.0e16
        hbm_capacity_bytes = 1.86e11
        interconnect_bandwidth_bytes_per_s = 9.0e11
        per_layer_comm_latency_s = 2.0e-6

        [model]
        model_name = "dense-8b"
        total_params = 8_000_000_000
        active_params_per_token = 8_000_000_000
        num_layers = 32
        hidden_size = 4096
        bytes_per_param = 1

        [sharding]
        gpus_per_instance = 4
        tensor_parallel = 4
        pipeline_parallel = 1
        expert_parallel = 1

        [deployment]
        global_batch = 128
        prompt_tokens = 64
        gen_gpus = 16

        [traffic]
        kind = "lognormal"
        mu = 5.5
        sigma = 0.4
        max_tokens = 1024

        [speculation]
        draft_len = 4
        target_alpha = 3.0

        [pool_study]
        max_policy_lag = 1
        num_batches = 24
        warmup_batches = 4
    "#;

    fn pool_sections() -> Sections {
        Scenario::from_toml_str(POOL_TOML).unwrap().base_sections().unwrap()
    }

    #[test]
    fn instance_lag_cell_speeds_up_and_reacts_to_lag() {
        let sections = pool_sections();
        let cell = instance_lag_cell(&sections, 7, BTreeMap::new());
        assert!(cell.feasible, "{:?}", cell.reason);
        assert!(cell.rollout_speedup.unwrap() > 1.0);
        let measured = cell.measured_alpha.unwrap();
        assert!((measured - 3.0).abs() < 0.2, "measured alpha {measured}");

        // More allowed staleness can only shorten the sustained period.
        let mut relaxed = pool_sections();
        relaxed.pool_study.as_mut().unwrap().max_policy_lag = 3;
        let relaxed_cell = instance_lag_cell(&relaxed, 7, BTreeMap::new());
        assert!(relaxed_cell.step_s.unwrap() <= cell.step_s.unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn indivisible_pool_is_infeasible_not_fatal() {
        let mut sections = pool_sections();
        sections.deployment.as_mut().unwrap().gen_gpus = Some(18);
        let cell = instance_lag_cell(&sections, 7, BTreeMap::new());
        assert!(!cell.feasible);
        assert!(cell.reason.as_deref().unwrap().contains("divisible"));
    }

    #[test]
    fn broadcast_grows_one_hop_per_doubling() {
        let scenario = Scenario::from_toml_str(POOL_TOML).unwrap();
        let sections = scenario.base_sections().unwrap();
        let profile = profile_with_fraction(&sections, None).unwrap();
        let single = broadcast_s(&profile, 1);
        let expected = 8e9 / 9e11;
        assert!((single - expected).abs() < 1e-15, "{single}");
        assert!((broadcast_s(&profile, 2) - 2.0 * expected).abs() < 1e-15);
        assert!((broadcast_s(&profile, 32) - 6.0 * expected).abs() < 1e-14);
        assert!((broadcast_s(&profile, 33) - 7.0 * expected).abs() < 1e-14);
    }

    #[test]
    fn acceptance_resolution_rejects_unreachable_targets() {
        let spec = SpeculationSection {
            draft_len: 3,
            target_alpha: Some(4.5),
            beta: None,
            per_cycle_overhead_s: 0.0,
            draft_cost_fraction: None,
        };
        let err = resolve_acceptance(&spec).unwrap_err();
        assert!(err.contains("exceeds"), "{err}");
        let spec = SpeculationSection { target_alpha: Some(4.0), ..spec };
        let (model, alpha) = resolve_acceptance(&spec).unwrap();
        assert_eq!(alpha, 4.0);
        assert_eq!(model, AcceptanceModel::Iid { beta: 1.0 });
    }

    #[test]
    fn alpha_one_is_exactly_cost_neutral_without_draft_overhead() {
        let mut sections = pool_sections();
        sections.speculation.as_mut().unwrap().target_alpha = Some(1.0);
        sections.deployment.as_mut().unwrap().num_instances = 4;
        sections.deployment.as_mut().unwrap().gen_gpus = None;
        let cell = generation_cell(&sections, 11, BTreeMap::new());
        assert!(cell.feasible, "{:?}", cell.reason);
        // beta 0: every cycle emits exactly one token, and with free drafting
        // on a memory-bound batch a verify cycle costs exactly a decode step.
        // The two runs accumulate the same cycle costs in different summation
        // orders, so they agree to rounding, not bitwise.
        let speedup = cell.rollout_speedup.unwrap();
        assert!((speedup - 1.0).abs() < 1e-11, "{speedup}");
        assert_eq!(cell.measured_alpha.unwrap(), 1.0);
    }

    #[test]
    fn generation_cell_composes_full_step_when_stages_present() {
        let mut sections = pool_sections();
        sections.deployment.as_mut().unwrap().num_instances = 4;
        sections.deployment.as_mut().unwrap().gen_gpus = None;
        let bare = generation_cell(&sections, 11, BTreeMap::new());
        sections.step_stages = Some(crate::sweep::StepStagesSection {
            data_s: 0.004,
            prepare_s: 0.012,
            logprob_s: 0.045,
            train_s: 0.0568,
        });
        let composed = generation_cell(&sections, 11, BTreeMap::new());
        assert!(composed.feasible, "{:?}", composed.reason);
        assert_eq!(bare.rollout_speedup, composed.rollout_speedup);
        let e2e = composed.e2e_speedup.unwrap();
        let rollout = composed.rollout_speedup.unwrap();
        assert!(rollout > 1.0);
        assert!(e2e > 1.0 && e2e < rollout, "e2e {e2e} rollout {rollout}");
        assert!(composed.generation_share.unwrap() > 0.0);
        assert!(bare.e2e_speedup.is_none());
        assert!(bare.generation_share.is_none());
    }
}
