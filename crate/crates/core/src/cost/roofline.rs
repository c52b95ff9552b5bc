//! Step-latency providers: the roofline model and a fixed-cost stand-in.

use super::{CostError, DeploymentProfile};

/// Per-step latency provider consumed by the rollout simulator.
///
/// `local_batch` is the number of live sequences on one instance; all times
/// are seconds for the whole instance, not per sequence.
pub trait StepCost: Send + Sync {
    /// One autoregressive decode step (one token per live sequence).
    fn decode_step_s(&self, local_batch: usize) -> f64;

    /// One verification pass over `draft_len` draft tokens plus the bonus
    /// position. Must reduce to `decode_step_s` at `draft_len = 0` and never
    /// be cheaper than a decode step.
    fn verify_step_s(&self, local_batch: usize, draft_len: usize) -> f64;

    /// One drafting pass proposing `draft_len` tokens per sequence.
    fn draft_step_s(&self, local_batch: usize, draft_len: usize) -> f64;

    /// Prefill cost of a single prompt of `prompt_tokens` tokens.
    fn prefill_s_per_prompt(&self, prompt_tokens: usize) -> f64;
}

// ---------------------------------------------------------------------------
// Roofline provider
// ---------------------------------------------------------------------------

/// Two-term roofline over a validated deployment.
///
/// Construction performs the capacity check; once built, every latency query
/// is infallible and pure, so one instance can serve concurrent sweeps.
#[derive(Debug, Clone)]
pub struct RooflineCost {
    profile: DeploymentProfile,
    gpus: f64,
    efficiency: f64,
    bubble_s: f64,
}

impl RooflineCost {
    pub fn new(profile: &DeploymentProfile) -> Result<Self, CostError> {
        profile.validate()?;
        let gpus = profile.sharding.gpus_per_instance as f64;
        let efficiency = profile.sharding.resolved_efficiency();
        // Each pipeline-stage boundary hands activations to the next stage
        // once per step; pipeline_parallel = 1 pays nothing.
        let bubble_s = (profile.sharding.pipeline_parallel - 1) as f64
            * profile.hardware.per_layer_comm_latency_s;
        Ok(RooflineCost { profile: profile.clone(), gpus, efficiency, bubble_s })
    }

    pub fn profile(&self) -> &DeploymentProfile {
        &self.profile
    }

    /// Bytes of weights the step must stream for a batch of `local_batch`
    /// sequences: everything for dense models, the touched-expert subset for
    /// MoE, saturating at the full weight set.
    pub fn weight_traffic_bytes(&self, local_batch: usize) -> f64 {
        let model = &self.profile.model;
        let touched = model.active_params_per_token as f64
            * local_batch as f64
            * model.expert_spread_factor;
        touched.min(model.total_params as f64) * model.bytes_per_param as f64
    }

    fn memory_time_s(&self, local_batch: usize) -> f64 {
        self.weight_traffic_bytes(local_batch)
            / (self.gpus * self.profile.hardware.hbm_bandwidth_bytes_per_s)
    }

    /// Compute time for `tokens` forward tokens across the instance.
    fn compute_time_s(&self, tokens: f64) -> f64 {
        2.0 * self.profile.model.active_params_per_token as f64 * tokens
            / (self.gpus * self.profile.hardware.peak_flops_per_s)
    }

    /// Local batch at which compute time overtakes (saturated) memory time:
    /// `total_params * bytes * flops / (2 * active_params * bandwidth)`.
    ///
    /// Exact for dense models; for MoE it assumes the batch already touches
    /// every expert, which holds whenever the crossover sits past the
    /// traffic-saturation batch (true for the shipped profiles).
    pub fn ridge_batch(&self) -> f64 {
        let model = &self.profile.model;
        let hw = &self.profile.hardware;
        model.total_params as f64 * model.bytes_per_param as f64 * hw.peak_flops_per_s
            / (2.0 * model.active_params_per_token as f64 * hw.hbm_bandwidth_bytes_per_s)
    }

    fn step_s(&self, local_batch: usize, tokens_per_sequence: f64) -> f64 {
        let memory = self.memory_time_s(local_batch);
        let compute = self.compute_time_s(local_batch as f64 * tokens_per_sequence);
        memory.max(compute) / self.efficiency + self.bubble_s
    }
}

impl StepCost for RooflineCost {
    fn decode_step_s(&self, local_batch: usize) -> f64 {
        self.step_s(local_batch, 1.0)
    }

    /// Weight traffic is unchanged by multi-token verification: the step
    /// still reads each touched weight once. Only compute scales by k + 1.
    fn verify_step_s(&self, local_batch: usize, draft_len: usize) -> f64 {
        self.step_s(local_batch, (draft_len + 1) as f64)
    }

    fn draft_step_s(&self, local_batch: usize, draft_len: usize) -> f64 {
        draft_len as f64
            * self.profile.model.draft_cost_fraction
            * self.decode_step_s(local_batch)
    }

    /// Compute-bound by construction: prompt tokens arrive all at once, so
    /// the weight read amortizes away and no per-step bubble applies.
    fn prefill_s_per_prompt(&self, prompt_tokens: usize) -> f64 {
        self.compute_time_s(prompt_tokens as f64) / self.efficiency
    }
}

// ---------------------------------------------------------------------------
// Fixed provider
// ---------------------------------------------------------------------------

/// Batch-independent step costs, for controlled experiments and as the
/// stage-cost source when replaying published step breakdowns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedCost {
    pub decode_s: f64,
    pub verify_s: f64,
    pub draft_s_per_token: f64,
    pub prefill_s: f64,
}

impl FixedCost {
    /// Every cycle costs `step_s` regardless of mode; drafting and prefill
    /// are free. Makes partitioning and speculation cost-neutral on purpose.
    pub fn flat(step_s: f64) -> Self {
        FixedCost { decode_s: step_s, verify_s: step_s, draft_s_per_token: 0.0, prefill_s: 0.0 }
    }
}

impl StepCost for FixedCost {
    fn decode_step_s(&self, _local_batch: usize) -> f64 {
        self.decode_s
    }

    fn verify_step_s(&self, _local_batch: usize, draft_len: usize) -> f64 {
        if draft_len == 0 {
            self.decode_s
        } else {
            self.verify_s
        }
    }

    fn draft_step_s(&self, _local_batch: usize, draft_len: usize) -> f64 {
        draft_len as f64 * self.draft_s_per_token
    }

    fn prefill_s_per_prompt(&self, _prompt_tokens: usize) -> f64 {
        self.prefill_s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{HardwareProfile, ModelProfile, ShardingPlan};
    use proptest::prelude::*;

    fn hardware() -> HardwareProfile {
        HardwareProfile {
            gpu_name: "hbm8tb".to_string(),
            hbm_bandwidth_bytes_per_s: 8e12,
            peak_flops_per_s: 1e16,
            hbm_capacity_bytes: 186e9,
            interconnect_bandwidth_bytes_per_s: 9e11,
            per_layer_comm_latency_s: 2e-6,
        }
    }

    fn dense(total: u64, bytes: u32) -> ModelProfile {
        ModelProfile {
            model_name: "dense".to_string(),
            total_params: total,
            active_params_per_token: total,
            num_layers: 36,
            hidden_size: 4096,
            bytes_per_param: bytes,
            draft_cost_fraction: 0.0,
            expert_spread_factor: 8.0,
        }
    }

    fn moe_235b() -> ModelProfile {
        ModelProfile {
            model_name: "moe-235b".to_string(),
            total_params: 235_000_000_000,
            active_params_per_token: 22_000_000_000,
            num_layers: 94,
            hidden_size: 4096,
            bytes_per_param: 1,
            draft_cost_fraction: 0.0,
            expert_spread_factor: 8.0,
        }
    }

    fn roofline(model: ModelProfile, sharding: ShardingPlan) -> RooflineCost {
        RooflineCost::new(&DeploymentProfile { hardware: hardware(), model, sharding }).unwrap()
    }

    #[test]
    fn batch_one_is_pure_weight_streaming() {
        let cost = roofline(dense(8_000_000_000, 1), ShardingPlan::with_efficiency(4, 1, 1, 1.0));
        let expected = 8e9 / (4.0 * 8e12);
        let got = cost.decode_step_s(1);
        assert!((got - expected).abs() / expected < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn doubling_gpus_halves_latency_at_unit_efficiency() {
        let four = roofline(dense(8_000_000_000, 1), ShardingPlan::with_efficiency(4, 1, 1, 1.0));
        let eight = roofline(dense(8_000_000_000, 1), ShardingPlan::with_efficiency(8, 1, 1, 1.0));
        let ratio = four.decode_step_s(32) / eight.decode_step_s(32);
        assert!((ratio - 2.0).abs() < 1e-12, "{ratio}");
    }

    #[test]
    fn ridge_flat_below_linear_above() {
        // bytes 2 at these rates puts the crossover at exactly batch 1250.
        let cost = roofline(dense(8_000_000_000, 2), ShardingPlan::with_efficiency(4, 1, 1, 1.0));
        let ridge = cost.ridge_batch();
        assert!((ridge - 1250.0).abs() < 1e-9, "{ridge}");
        let floor = cost.decode_step_s(1);
        for batch in [10, 100, 625, 1249] {
            let got = cost.decode_step_s(batch);
            assert!((got - floor).abs() / floor < 0.01, "batch {batch}: {got} vs {floor}");
        }
        let at_ridge = cost.decode_step_s(1250);
        let doubled = cost.decode_step_s(2500);
        assert!((doubled - 2.0 * at_ridge).abs() / at_ridge < 1e-9);
        let quadrupled = cost.decode_step_s(5000);
        assert!((quadrupled - 2.0 * doubled).abs() / doubled < 1e-9);
    }

    #[test]
    fn verify_at_zero_draft_equals_decode() {
        let cost = roofline(dense(8_000_000_000, 1), ShardingPlan::new(4, 1, 1));
        for batch in [1, 64, 700, 3000] {
            assert_eq!(cost.verify_step_s(batch, 0), cost.decode_step_s(batch));
        }
    }

    #[test]
    fn verify_free_when_memory_bound_and_k_plus_one_when_compute_bound() {
        let cost = roofline(dense(8_000_000_000, 1), ShardingPlan::new(4, 1, 1));
        let ridge = cost.ridge_batch();
        assert!((ridge - 625.0).abs() < 1e-9, "{ridge}");
        // (k + 1) * 64 = 256 still sits below the ridge: verification rides
        // along with the weight read.
        let decode = cost.decode_step_s(64);
        let verify = cost.verify_step_s(64, 3);
        assert!((verify - decode).abs() / decode < 1e-12);
        // Far above the ridge the compute term owns the max and the ratio
        // approaches k + 1 exactly (no bubble at pipeline_parallel 1).
        let deep = 100_000;
        let ratio = cost.verify_step_s(deep, 3) / cost.decode_step_s(deep);
        assert!((ratio - 4.0).abs() < 1e-9, "{ratio}");
    }

    #[test]
    fn verify_nondecreasing_in_draft_len_and_never_below_decode() {
        let cost = roofline(moe_235b(), ShardingPlan::new(8, 2, 4));
        for batch in [1, 32, 512, 4096, 20_000] {
            let decode = cost.decode_step_s(batch);
            let mut last = decode;
            for k in 0..=8 {
                let verify = cost.verify_step_s(batch, k);
                assert!(verify >= decode);
                assert!(verify >= last);
                last = verify;
            }
        }
    }

    #[test]
    fn draft_cost_is_fractional_decode() {
        let mut model = dense(8_000_000_000, 1);
        model.draft_cost_fraction = 0.1;
        let cost = roofline(model, ShardingPlan::new(4, 1, 1));
        let base = cost.decode_step_s(64);
        let draft = cost.draft_step_s(64, 3);
        assert!((draft - 0.3 * base).abs() < 1e-15);
        let free = roofline(dense(8_000_000_000, 1), ShardingPlan::new(4, 1, 1));
        assert_eq!(free.draft_step_s(64, 3), 0.0);
    }

    #[test]
    fn prefill_is_linear_and_matches_hand_computed_value() {
        let cost = roofline(moe_235b(), ShardingPlan::new(8, 1, 8));
        let one = cost.prefill_s_per_prompt(1);
        let double = cost.prefill_s_per_prompt(4096);
        let single = cost.prefill_s_per_prompt(2048);
        assert!((double - 2.0 * single).abs() / single < 1e-9);
        assert!((single - 2048.0 * one).abs() / single < 1e-9);
        // Hand evaluation for the 64-GPU 22B-active profile at 2048 tokens:
        // 2 * 22e9 * 2048 / (64 * 1e16) = 1.408e-4 s of ideal compute,
        // times 1.24 for the 64-GPU efficiency penalty.
        assert!((single - 1.74592e-4).abs() / 1.74592e-4 < 1e-9, "{single}");
    }

    #[test]
    fn moe_traffic_saturates_at_full_weights() {
        let cost = roofline(moe_235b(), ShardingPlan::new(8, 1, 8));
        let small = cost.weight_traffic_bytes(1);
        assert!((small - 22e9 * 8.0).abs() < 1.0, "{small}");
        let big = cost.weight_traffic_bytes(64);
        assert!((big - 235e9).abs() < 1.0, "{big}");
        // Past saturation and below the ridge, latency is flat in batch.
        let a = cost.decode_step_s(2);
        let b = cost.decode_step_s(512);
        assert!((a - b).abs() / a < 1e-12);
    }

    #[test]
    fn dense_compute_dominates_moe_with_equal_totals() {
        let dense_cost = roofline(dense(235_000_000_000, 1), ShardingPlan::new(8, 1, 8));
        let moe_cost = roofline(moe_235b(), ShardingPlan::new(8, 1, 8));
        for batch in [1, 64, 4096, 50_000] {
            assert!(dense_cost.decode_step_s(batch) >= moe_cost.decode_step_s(batch));
        }
    }

    #[test]
    fn pipeline_bubble_adds_per_boundary_latency() {
        let flat = roofline(dense(8_000_000_000, 1), ShardingPlan::with_efficiency(8, 1, 1, 1.0));
        let staged = ShardingPlan {
            sharding_efficiency: Some(1.0),
            ..ShardingPlan::new(2, 4, 1)
        };
        let piped = roofline(dense(8_000_000_000, 1), staged);
        let delta = piped.decode_step_s(16) - flat.decode_step_s(16);
        assert!((delta - 3.0 * 2e-6).abs() < 1e-15, "{delta}");
    }

    #[test]
    fn fixed_cost_is_batch_flat() {
        let cost = FixedCost::flat(0.25);
        assert_eq!(cost.decode_step_s(1), cost.decode_step_s(4096));
        assert_eq!(cost.verify_step_s(7, 4), 0.25);
        assert_eq!(cost.verify_step_s(7, 0), 0.25);
        assert_eq!(cost.draft_step_s(7, 4), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Decode latency moves the right way along every profile axis.
        #[test]
        fn roofline_monotonicity(
            total_gb in 1u64..400,
            active_ratio in 0.05f64..=1.0,
            bytes_idx in 0usize..3,
            bw_scale in 1.0f64..8.0,
            flops_scale in 1.0f64..8.0,
            batch in 1usize..5000,
            batch_bump in 1usize..5000,
        ) {
            let bytes = [1u32, 2, 4][bytes_idx];
            let total = total_gb * 1_000_000_000;
            let active = ((total as f64 * active_ratio) as u64).max(1);
            let mut hw = hardware();
            hw.hbm_capacity_bytes = 1e15;
            hw.hbm_bandwidth_bytes_per_s = 1e12 * bw_scale;
            hw.peak_flops_per_s = 1e15 * flops_scale;
            let model = ModelProfile {
                model_name: "prop".to_string(),
                total_params: total,
                active_params_per_token: active,
                num_layers: 36,
                hidden_size: 1024,
                bytes_per_param: bytes,
                draft_cost_fraction: 0.0,
                expert_spread_factor: 8.0,
            };
            let plan = ShardingPlan::new(4, 1, 1);
            let cost = RooflineCost::new(
                &DeploymentProfile { hardware: hw.clone(), model: model.clone(), sharding: plan.clone() },
            ).unwrap();

            let base = cost.decode_step_s(batch);
            prop_assert!(base.is_finite() && base > 0.0);
            prop_assert!(cost.decode_step_s(batch + batch_bump) >= base);

            let mut faster = hw.clone();
            faster.hbm_bandwidth_bytes_per_s *= 2.0;
            faster.peak_flops_per_s *= 2.0;
            let fast_cost = RooflineCost::new(
                &DeploymentProfile { hardware: faster, model: model.clone(), sharding: plan.clone() },
            ).unwrap();
            prop_assert!(fast_cost.decode_step_s(batch) <= base);

            let mut heavier = model;
            heavier.bytes_per_param = 4;
            let heavy_cost = RooflineCost::new(
                &DeploymentProfile { hardware: hw, model: heavier, sharding: plan },
            ).unwrap();
            prop_assert!(heavy_cost.decode_step_s(batch) >= base);
        }

        /// Verification is nondecreasing in k and continuous across the ridge.
        #[test]
        fn verify_monotone_in_k(batch in 1usize..20_000, k in 0usize..8) {
            let cost = roofline(dense(8_000_000_000, 1), ShardingPlan::new(4, 1, 1));
            prop_assert!(cost.verify_step_s(batch, k + 1) >= cost.verify_step_s(batch, k));
            prop_assert!(cost.verify_step_s(batch, k) >= cost.decode_step_s(batch));
        }
    }
}
