//! Roofline-style step-latency model for sharded transformer serving.
//!
//! Latency per decode step is the larger of two terms, divided by a sharding
//! efficiency penalty, plus a pipeline-parallel bubble:
//!
//! ```text
//!   latency
//!      ^                         .  compute bound
//!      |                      .
//!      |                   .
//!      |   memory bound .
//!      +--------------*----------------> local batch
//!                   ridge
//!
//!   memory_time  = weight_traffic_bytes / (gpus * hbm_bandwidth)
//!   compute_time = 2 * active_params * tokens / (gpus * peak_flops)
//! ```
//!
//! Verification of k draft tokens multiplies only the compute term by k + 1:
//! the weights are read once per step regardless of how many tokens each
//! sequence carries. That asymmetry is the entire economics of speculation on
//! memory-bound serving, and it is why the model must distinguish the two
//! terms rather than fit a single cost curve.
//!
//! Mixture-of-experts models read only the experts their batch touches:
//! `traffic = min(total_params, active_params * batch * expert_spread_factor)`.
//!
//! All profile structs deserialize directly from the config-file sections of
//! the same names; every field name carries its unit as a suffix.

mod roofline;

pub use roofline::{FixedCost, RooflineCost, StepCost};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default sharding-efficiency penalty constant `c` in
/// `efficiency = 1 / (1 + c * log2(gpus_per_instance))`.
///
/// At 64 GPUs per instance this keeps 80.6% of ideal throughput.
pub const DEFAULT_EFFICIENCY_PENALTY: f64 = 0.04;

/// Default expert-coverage multiplier for MoE weight traffic.
pub const DEFAULT_EXPERT_SPREAD_FACTOR: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("{field} must be finite and strictly positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("active_params_per_token {active} exceeds total_params {total}")]
    ActiveExceedsTotal { active: u64, total: u64 },
    #[error("bytes_per_param must be 1, 2, or 4, got {0}")]
    BadBytesPerParam(u32),
    #[error("{field} must be negative-free and finite, got {value}")]
    NegativeRatio { field: &'static str, value: f64 },
    #[error(
        "sharding product tensor {tp} x pipeline {pp} x expert {ep} = {product} \
         does not equal gpus_per_instance {gpus}"
    )]
    ShardingProductMismatch { tp: u32, pp: u32, ep: u32, product: u32, gpus: u32 },
    #[error("sharding_efficiency must lie in (0, 1], got {0}")]
    BadEfficiency(f64),
    #[error("pipeline_parallel {pp} exceeds num_layers {layers}; every stage needs a layer")]
    TooManyPipelineStages { pp: u32, layers: u32 },
    #[error(
        "model weights need {weights_bytes:.3e} bytes but the instance has \
         {capacity_bytes:.3e} bytes of HBM"
    )]
    ModelDoesNotFit { weights_bytes: f64, capacity_bytes: f64 },
}

// ---------------------------------------------------------------------------
// Profiles
// ---------------------------------------------------------------------------

/// Per-GPU capability numbers. These are configuration inputs describing a
/// GPU class, not measured ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    pub gpu_name: String,
    pub hbm_bandwidth_bytes_per_s: f64,
    pub peak_flops_per_s: f64,
    pub hbm_capacity_bytes: f64,
    pub interconnect_bandwidth_bytes_per_s: f64,
    pub per_layer_comm_latency_s: f64,
}

impl HardwareProfile {
    pub fn violations(&self) -> Vec<CostError> {
        let fields = [
            ("hbm_bandwidth_bytes_per_s", self.hbm_bandwidth_bytes_per_s),
            ("peak_flops_per_s", self.peak_flops_per_s),
            ("hbm_capacity_bytes", self.hbm_capacity_bytes),
            ("interconnect_bandwidth_bytes_per_s", self.interconnect_bandwidth_bytes_per_s),
            ("per_layer_comm_latency_s", self.per_layer_comm_latency_s),
        ];
        fields
            .into_iter()
            .filter(|(_, value)| !value.is_finite() || *value <= 0.0)
            .map(|(field, value)| CostError::NonPositive { field, value })
            .collect()
    }
}

/// Model architecture summary. `active_params_per_token` equals
/// `total_params` for dense models and the routed subset for MoE.
///
/// `num_layers` and `hidden_size` are descriptive: attention cost is folded
/// into the params-based compute term, so they only participate in
/// validation (layers vs pipeline stages).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    pub model_name: String,
    pub total_params: u64,
    pub active_params_per_token: u64,
    pub num_layers: u32,
    pub hidden_size: u32,
    pub bytes_per_param: u32,
    /// Ratio of one draft-token forward cost to one target decode step.
    #[serde(default)]
    pub draft_cost_fraction: f64,
    /// How many distinct experts a batch of n sequences touches per active
    /// parameter, before saturating at the full weight set.
    #[serde(default = "default_spread")]
    pub expert_spread_factor: f64,
}

fn default_spread() -> f64 {
    DEFAULT_EXPERT_SPREAD_FACTOR
}

impl ModelProfile {
    pub fn weights_bytes(&self) -> f64 {
        self.total_params as f64 * self.bytes_per_param as f64
    }

    pub fn violations(&self) -> Vec<CostError> {
        let mut out = Vec::new();
        if self.total_params == 0 {
            out.push(CostError::NonPositive { field: "total_params", value: 0.0 });
        }
        if self.active_params_per_token == 0 {
            out.push(CostError::NonPositive { field: "active_params_per_token", value: 0.0 });
        } else if self.active_params_per_token > self.total_params {
            out.push(CostError::ActiveExceedsTotal {
                active: self.active_params_per_token,
                total: self.total_params,
            });
        }
        if self.num_layers == 0 {
            out.push(CostError::NonPositive { field: "num_layers", value: 0.0 });
        }
        if self.hidden_size == 0 {
            out.push(CostError::NonPositive { field: "hidden_size", value: 0.0 });
        }
        if !matches!(self.bytes_per_param, 1 | 2 | 4) {
            out.push(CostError::BadBytesPerParam(self.bytes_per_param));
        }
        if !self.draft_cost_fraction.is_finite() || self.draft_cost_fraction < 0.0 {
            out.push(CostError::NegativeRatio {
                field: "draft_cost_fraction",
                value: self.draft_cost_fraction,
            });
        }
        if !self.expert_spread_factor.is_finite() || self.expert_spread_factor <= 0.0 {
            out.push(CostError::NonPositive {
                field: "expert_spread_factor",
                value: self.expert_spread_factor,
            });
        }
        out
    }
}

/// How one model instance is laid out across GPUs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardingPlan {
    pub gpus_per_instance: u32,
    pub tensor_parallel: u32,
    pub pipeline_parallel: u32,
    pub expert_parallel: u32,
    /// Explicit efficiency override in (0, 1]. When absent, efficiency is
    /// `1 / (1 + efficiency_penalty * log2(gpus_per_instance))`.
    #[serde(default)]
    pub sharding_efficiency: Option<f64>,
    #[serde(default = "default_penalty")]
    pub efficiency_penalty: f64,
}

fn default_penalty() -> f64 {
    DEFAULT_EFFICIENCY_PENALTY
}

impl ShardingPlan {
    /// Plan with the default penalty curve and no explicit override.
    pub fn new(tensor_parallel: u32, pipeline_parallel: u32, expert_parallel: u32) -> Self {
        ShardingPlan {
            gpus_per_instance: tensor_parallel * pipeline_parallel * expert_parallel,
            tensor_parallel,
            pipeline_parallel,
            expert_parallel,
            sharding_efficiency: None,
            efficiency_penalty: DEFAULT_EFFICIENCY_PENALTY,
        }
    }

    /// Plan with a pinned efficiency, for controlled experiments.
    pub fn with_efficiency(
        tensor_parallel: u32,
        pipeline_parallel: u32,
        expert_parallel: u32,
        efficiency: f64,
    ) -> Self {
        ShardingPlan {
            sharding_efficiency: Some(efficiency),
            ..ShardingPlan::new(tensor_parallel, pipeline_parallel, expert_parallel)
        }
    }

    /// Fraction of ideal aggregate throughput this layout retains.
    pub fn resolved_efficiency(&self) -> f64 {
        match self.sharding_efficiency {
            Some(efficiency) => efficiency,
            None => {
                let g = self.gpus_per_instance.max(1) as f64;
                1.0 / (1.0 + self.efficiency_penalty * g.log2())
            }
        }
    }

    pub fn violations(&self) -> Vec<CostError> {
        let mut out = Vec::new();
        for (field, value) in [
            ("gpus_per_instance", self.gpus_per_instance),
            ("tensor_parallel", self.tensor_parallel),
            ("pipeline_parallel", self.pipeline_parallel),
            ("expert_parallel", self.expert_parallel),
        ] {
            if value == 0 {
                out.push(CostError::NonPositive { field, value: 0.0 });
            }
        }
        let product = self
            .tensor_parallel
            .saturating_mul(self.pipeline_parallel)
            .saturating_mul(self.expert_parallel);
        if product != self.gpus_per_instance {
            out.push(CostError::ShardingProductMismatch {
                tp: self.tensor_parallel,
                pp: self.pipeline_parallel,
                ep: self.expert_parallel,
                product,
                gpus: self.gpus_per_instance,
            });
        }
        if let Some(efficiency) = self.sharding_efficiency {
            if !efficiency.is_finite() || efficiency <= 0.0 || efficiency > 1.0 {
                out.push(CostError::BadEfficiency(efficiency));
            }
        }
        if !self.efficiency_penalty.is_finite() || self.efficiency_penalty < 0.0 {
            out.push(CostError::NegativeRatio {
                field: "efficiency_penalty",
                value: self.efficiency_penalty,
            });
        }
        out
    }
}

/// Everything the roofline needs: one model on one GPU layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentProfile {
    pub hardware: HardwareProfile,
    pub model: ModelProfile,
    pub sharding: ShardingPlan,
}

impl DeploymentProfile {
    /// All invariant violations, cross-field checks included. Empty means
    /// the profile is usable.
    pub fn violations(&self) -> Vec<CostError> {
        let mut out = self.hardware.violations();
        out.extend(self.model.violations());
        out.extend(self.sharding.violations());
        if out.is_empty() {
            if self.sharding.pipeline_parallel > self.model.num_layers {
                out.push(CostError::TooManyPipelineStages {
                    pp: self.sharding.pipeline_parallel,
                    layers: self.model.num_layers,
                });
            }
            let capacity =
                self.sharding.gpus_per_instance as f64 * self.hardware.hbm_capacity_bytes;
            let weights = self.model.weights_bytes();
            if weights > capacity {
                out.push(CostError::ModelDoesNotFit {
                    weights_bytes: weights,
                    capacity_bytes: capacity,
                });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), CostError> {
        match self.violations().into_iter().next() {
            Some(error) => Err(error),
            None => Ok(()),
        }
    }
}
