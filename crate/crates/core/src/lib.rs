//! Performance models and simulators for speculative decoding in RL
//! post-training pipelines.
//!
//! The crate answers two questions about rollout generation, the stage that
//! dominates reinforcement-learning post-training steps:
//!
//! 1. Is speculative decoding lossless? [`specdec`] implements the
//!    accept/reject verification kernel over explicit categorical
//!    distributions together with a brute-force enumeration oracle, so the
//!    output-distribution guarantee can be checked exactly on small vocabularies.
//! 2. When does it pay off end to end? [`analytic`], [`cost`], [`rollout`],
//!    and [`pipeline`] build up from closed-form speedup bounds through a
//!    roofline cost model and a batch-level rollout simulator to a
//!    discrete-event scheduler for synchronous and asynchronous RL pipelines.
//!    [`sweep`] drives parameter sweeps over all of it and renders tables,
//!    heatmaps, and summary files.
//!
//! ```text
//!             +-----------+     +----------+
//!             |  specdec  |     | analytic |
//!             +-----------+     +----------+
//!                   |    acceptance   |
//!                   v    models       v
//!   +------+    +---------+    +----------+    +-------+
//!   | cost | -> | rollout | -> | pipeline | -> | sweep |
//!   +------+    +---------+    +----------+    +-------+
//!    roofline    batch-level    step overlap     scenarios,
//!    latencies   generation     & policy lag     tables, SVG
//! ```
//!
//! Everything is deterministic: simulations draw randomness from named,
//! counter-based substreams (see [`rng`]), so a scenario replays byte-for-byte
//! across runs and thread counts.

pub mod analytic;
pub mod cost;
pub mod pipeline;
pub mod rng;
pub mod rollout;
pub mod specdec;
pub mod sweep;

pub use analytic::{AcceptanceModel, StageTimes};
pub use cost::{DeploymentProfile, FixedCost, HardwareProfile, ModelProfile, ShardingPlan, StepCost};
pub use pipeline::{PipelineConfig, PipelineMode, PipelineTrace};
pub use rollout::{LengthDistribution, RolloutPlan, RolloutResult, SpeculationConfig};
pub use specdec::{CategoricalDist, DraftProposal, NGramTable, VerifyOutcome};
pub use sweep::{run_scenario, Scenario, ScenarioSpec, SweepResult};
