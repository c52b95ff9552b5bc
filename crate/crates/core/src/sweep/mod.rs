//! Scenario-driven experiment runner: one TOML file describes a base
//! configuration plus parameter axes, and the runner evaluates every cell of
//! the cross product into a table of speedup records.
//!
//! ```text
//!   scenario.toml
//!   ┌──────────────────────────────┐
//!   │ [scenario]  kind, axes, seed │      per cell: patch -> typed config
//!   │ [hardware] [model] [traffic] │ ──►  -> cost model -> rollout sim
//!   │ [speculation] [step_stages]  │      -> step composition
//!   └──────────────────────────────┘              │
//!                                                 ▼
//!                         SweepResult { cells, provenance }
//!                          ├─ emit_table    (CSV / aligned text)
//!                          ├─ emit_heatmap  (SVG)
//!                          └─ summary JSON, occupancy / timeline CSV
//! ```
//!
//! Cells are independent: each gets its own seed derived from the scenario
//! seed and its coordinates, so evaluation order (and thread count) cannot
//! change any result. Cells whose parameters are unsatisfiable, such as a
//! target acceptance above the draft-length cap or a model that does not fit
//! the configured GPUs, are reported as infeasible rows instead of aborting
//! the sweep.

mod emit;
mod eval;
mod presets;

pub use emit::{
    emit_heatmap, emit_occupancy_csv, emit_summary_json, emit_table, emit_timeline_csv,
    speedup_color, TableFormat,
};
pub use presets::preset_names;

use crate::analytic::StageTimes;
use crate::cost::{HardwareProfile, ModelProfile, ShardingPlan};
use crate::pipeline::{PipelineConfig, PipelineMode, StageSpan};
use crate::rollout::{LengthDistribution, OccupancySample};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

/// Default cap on the number of sweep cells; override with
/// `scenario.max_cells` when a larger grid is intentional.
pub const DEFAULT_MAX_CELLS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("failed to parse scenario file: {0}")]
    Parse(String),
    #[error("no preset named {0:?}; run list-presets for the shipped names")]
    UnknownPreset(String),
    #[error("configuration is invalid:\n{}", .0.join("\n"))]
    InvalidConfig(Vec<String>),
    #[error("cell {coordinates} does not deserialize: {message}")]
    BadCell { coordinates: String, message: String },
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("heatmap axes do not factor the grid: {0}")]
    NonFactorableGrid(String),
    #[error("unknown heatmap value field {0:?}")]
    UnknownValueField(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// What a cell evaluation computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Fixed baseline/accelerated stage breakdowns per workload row.
    StageReplay,
    /// Drafting methods compared against a shared autoregressive baseline.
    MethodTable,
    /// Rollout simulation per cell, optionally composed into a sync step.
    GenerationGrid,
    /// Generation-pool throughput across instance counts and policy lags.
    InstanceLagGrid,
    /// Sync vs async scheduling of the same workload, all four traces.
    AsyncCompare,
}

impl ScenarioKind {
    fn is_grid(self) -> bool {
        matches!(self, ScenarioKind::GenerationGrid | ScenarioKind::InstanceLagGrid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Table,
    Heatmap,
    Curve,
}

/// One swept parameter: a dotted path into the configuration tables plus the
/// values to substitute.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub path: String,
    pub values: Vec<toml::Value>,
}

/// A named bundle of configuration overrides evaluated as an outer loop
/// around the axes, e.g. one group per model family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    #[serde(default)]
    pub patch: BTreeMap<String, toml::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapSpec {
    /// Axis path providing heatmap columns.
    pub x: String,
    /// Axis path providing heatmap rows.
    pub y: String,
    /// Cell fields to render, one SVG per entry.
    pub values: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_outputs")]
    pub outputs: Vec<OutputKind>,
    #[serde(default, rename = "axis")]
    pub axes: Vec<AxisSpec>,
    #[serde(default, rename = "group")]
    pub groups: Vec<GroupSpec>,
    #[serde(default = "default_max_cells")]
    pub max_cells: usize,
    #[serde(default)]
    pub heatmap: Option<HeatmapSpec>,
}

fn default_outputs() -> Vec<OutputKind> {
    vec![OutputKind::Table]
}

fn default_max_cells() -> usize {
    DEFAULT_MAX_CELLS
}

// ---------------------------------------------------------------------------
// Configuration sections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentSection {
    /// Sequences generated per rollout, split across instances.
    pub global_batch: usize,
    #[serde(default = "one")]
    pub num_instances: usize,
    pub prompt_tokens: usize,
    /// Total GPUs in the generation pool; instance count is derived as
    /// `gen_gpus / sharding.gpus_per_instance` by instance-count sweeps.
    #[serde(default)]
    pub gen_gpus: Option<u64>,
}

fn one() -> usize {
    1
}

/// Speculation settings for grid sweeps. Acceptance is parameterized either
/// by the per-token rate `beta` or by the mean emitted length `target_alpha`
/// (inverted to a rate); exactly one must be set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeculationSection {
    pub draft_len: usize,
    #[serde(default)]
    pub target_alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub per_cycle_overhead_s: f64,
    /// Overrides the model profile's draft cost fraction when set.
    #[serde(default)]
    pub draft_cost_fraction: Option<f64>,
}

/// Fixed train-side stage costs used to compose rollout latency into one
/// synchronous step for end-to-end speedups.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepStagesSection {
    pub data_s: f64,
    pub prepare_s: f64,
    pub logprob_s: f64,
    pub train_s: f64,
}

impl StepStagesSection {
    pub fn with_gen(&self, gen_s: f64) -> Result<StageTimes, crate::analytic::AnalyticError> {
        StageTimes::new(self.data_s, self.prepare_s, gen_s, self.logprob_s, self.train_s)
    }
}

/// Generation-pool scheduling parameters for instance-count sweeps.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolStudySection {
    pub max_policy_lag: u32,
    #[serde(default = "default_num_batches")]
    pub num_batches: usize,
    #[serde(default = "default_warmup_batches")]
    pub warmup_batches: usize,
}

fn default_num_batches() -> usize {
    24
}

fn default_warmup_batches() -> usize {
    4
}

/// One measured workload for replay kinds: the same step with and without
/// accelerated generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub name: String,
    /// Mean accepted length backing the acceleration, for bound cross-checks.
    #[serde(default)]
    pub alpha: Option<f64>,
    pub baseline: StageTimes,
    pub accelerated: StageTimes,
}

/// One drafting method row for method tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    /// Mean emitted tokens per cycle; 1.0 with draft_len 0 is the baseline.
    pub alpha: f64,
    pub draft_len: usize,
    #[serde(default)]
    pub per_cycle_overhead_s: f64,
    #[serde(default)]
    pub draft_cost_fraction: Option<f64>,
}

/// Everything a scenario file may declare besides `[scenario]` itself.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct Sections {
    pub hardware: Option<HardwareProfile>,
    pub model: Option<ModelProfile>,
    pub sharding: Option<ShardingPlan>,
    pub deployment: Option<DeploymentSection>,
    pub traffic: Option<LengthDistribution>,
    pub pipeline: Option<PipelineConfig>,
    pub speculation: Option<SpeculationSection>,
    pub pool_study: Option<PoolStudySection>,
    pub step_stages: Option<StepStagesSection>,
    #[serde(default)]
    pub workload: Vec<WorkloadSpec>,
    #[serde(default)]
    pub method: Vec<MethodSpec>,
}

// ---------------------------------------------------------------------------
// Scenario loading
// ---------------------------------------------------------------------------

/// A parsed scenario file: the `[scenario]` header plus the raw configuration
/// tables that cells are patched from.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    sections_value: toml::Value,
    config_sha256: String,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario, SweepError> {
        let mut root: toml::Value =
            toml::from_str(text).map_err(|e| SweepError::Parse(e.to_string()))?;
        let table = root
            .as_table_mut()
            .ok_or_else(|| SweepError::Parse("top level must be a table".into()))?;
        let spec_value = table
            .remove("scenario")
            .ok_or_else(|| SweepError::Parse("missing [scenario] table".into()))?;
        let spec: ScenarioSpec =
            spec_value.try_into().map_err(|e| SweepError::Parse(format!("[scenario]: {e}")))?;
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        Ok(Scenario { spec, sections_value: root, config_sha256: hex(&hasher.finalize()) })
    }

    /// Loads one of the shipped presets by name.
    pub fn preset(name: &str) -> Result<Scenario, SweepError> {
        let text = presets::preset_text(name)
            .ok_or_else(|| SweepError::UnknownPreset(name.to_string()))?;
        Scenario::from_toml_str(text)
    }

    pub fn config_sha256(&self) -> &str {
        &self.config_sha256
    }

    /// Base sections with no patches applied.
    pub(crate) fn base_sections(&self) -> Result<Sections, SweepError> {
        typed_sections(&self.sections_value, "base configuration")
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn typed_sections(value: &toml::Value, what: &str) -> Result<Sections, SweepError> {
    value.clone().try_into().map_err(|e: toml::de::Error| SweepError::BadCell {
        coordinates: what.to_string(),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

/// One evaluated cell. Fields a kind does not compute stay `None`; infeasible
/// cells carry only their inputs and a reason.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    /// Coordinate labels, e.g. axis path -> value or workload/mode names.
    pub inputs: BTreeMap<String, String>,
    pub feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Configured mean emitted tokens per cycle.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Mean emitted tokens per cycle observed in the simulation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rollout_speedup: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e2e_speedup: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exposed_gen_s: Option<f64>,
    /// Absolute step or batch period, where the kind defines one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation_share: Option<f64>,
}

impl SweepCell {
    pub(crate) fn infeasible(inputs: BTreeMap<String, String>, reason: String) -> SweepCell {
        SweepCell {
            inputs,
            feasible: false,
            reason: Some(reason),
            alpha: None,
            measured_alpha: None,
            rollout_speedup: None,
            e2e_speedup: None,
            exposed_gen_s: None,
            step_s: None,
            generation_share: None,
        }
    }

    pub(crate) fn feasible(inputs: BTreeMap<String, String>) -> SweepCell {
        SweepCell { feasible: true, ..SweepCell::infeasible(inputs, String::new()) }
    }

    /// Field accessor used by table and heatmap emission.
    pub fn value(&self, field: &str) -> Option<f64> {
        match field {
            "alpha" => self.alpha,
            "measured_alpha" => self.measured_alpha,
            "rollout_speedup" => self.rollout_speedup,
            "e2e_speedup" => self.e2e_speedup,
            "exposed_gen_s" => self.exposed_gen_s,
            "step_s" => self.step_s,
            "generation_share" => self.generation_share,
            _ => None,
        }
    }
}

/// Metric fields that tables and heatmaps may reference.
pub const CELL_VALUE_FIELDS: &[&str] = &[
    "alpha",
    "measured_alpha",
    "rollout_speedup",
    "e2e_speedup",
    "exposed_gen_s",
    "step_s",
    "generation_share",
];

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
    pub tool_version: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedCurve {
    pub label: String,
    pub samples: Vec<OccupancySample>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedTimeline {
    pub label: String,
    pub spans: Vec<StageSpan>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub scenario_name: String,
    pub kind: ScenarioKind,
    /// Input-column order for tabular output.
    pub input_columns: Vec<String>,
    pub cells: Vec<SweepCell>,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub occupancy_curves: Vec<NamedCurve>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub timelines: Vec<NamedTimeline>,
}

impl SweepResult {
    /// The cell whose inputs contain every given (key, value) pair.
    pub fn find_cell(&self, pairs: &[(&str, &str)]) -> Option<&SweepCell> {
        self.cells.iter().find(|cell| {
            pairs.iter().all(|(k, v)| cell.inputs.get(*k).map(String::as_str) == Some(*v))
        })
    }
}

// ---------------------------------------------------------------------------
// Patching and cell coordinates
// ---------------------------------------------------------------------------

/// Renders a patch value the way it would appear in the file, minus string
/// quotes; used for cell labels and seed derivation.
fn value_label(value: &toml::Value) -> String {
    match value {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Replaces the value at a dotted path. Every intermediate segment must be an
/// existing table and the final key must already exist, so axes can only move
/// within the declared configuration space.
fn apply_patch(root: &mut toml::Value, path: &str, value: &toml::Value) -> Result<(), String> {
    let mut current = root;
    let segments: Vec<&str> = path.split('.').collect();
    let (last, walk) = segments.split_last().ok_or("empty path")?;
    for segment in walk {
        current = current
            .get_mut(*segment)
            .ok_or_else(|| format!("no table {segment:?} along {path:?}"))?;
        if !current.is_table() {
            return Err(format!("{segment:?} along {path:?} is not a table"));
        }
    }
    let table = current.as_table_mut().ok_or_else(|| format!("{path:?} has no parent table"))?;
    match table.get_mut(*last) {
        Some(slot) => {
            *slot = value.clone();
            Ok(())
        }
        None => Err(format!("path {path:?} does not exist in the base configuration")),
    }
}

/// Independent seed for one cell, stable under axis reordering and parallel
/// evaluation: a digest of the scenario seed, group name, and the sorted
/// `path=value` coordinate strings.
fn cell_seed(seed: u64, group: &str, patches: &[(String, String)]) -> u64 {
    let mut coordinates: Vec<String> =
        patches.iter().map(|(path, value)| format!("{path}={value}")).collect();
    coordinates.sort();
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(group.as_bytes());
    for coordinate in &coordinates {
        hasher.update([0u8]);
        hasher.update(coordinate.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields at least 8 bytes"))
}

/// Row-major index tuples over the axis value lists, last axis fastest.
fn cross_indices(lens: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = lens.iter().product();
    let mut out = Vec::with_capacity(total);
    for mut flat in 0..total {
        let mut tuple = vec![0usize; lens.len()];
        for (slot, &len) in tuple.iter_mut().zip(lens).rev() {
            *slot = flat % len;
            flat /= len;
        }
        out.push(tuple);
    }
    out
}

struct CellJob {
    inputs: BTreeMap<String, String>,
    coordinates: String,
    seed: u64,
    value: toml::Value,
}

fn grid_jobs(scenario: &Scenario) -> Result<Vec<CellJob>, SweepError> {
    let spec = &scenario.spec;
    let implicit_group = GroupSpec { name: String::new(), patch: BTreeMap::new() };
    let groups: Vec<&GroupSpec> = if spec.groups.is_empty() {
        vec![&implicit_group]
    } else {
        spec.groups.iter().collect()
    };
    let lens: Vec<usize> = spec.axes.iter().map(|a| a.values.len()).collect();
    let mut jobs = Vec::new();
    for group in groups {
        let mut base = scenario.sections_value.clone();
        for (path, value) in &group.patch {
            apply_patch(&mut base, path, value).map_err(SweepError::Scenario)?;
        }
        for tuple in cross_indices(&lens) {
            let mut value = base.clone();
            let mut inputs = BTreeMap::new();
            let mut patches = Vec::with_capacity(tuple.len());
            if !group.name.is_empty() {
                inputs.insert("group".to_string(), group.name.clone());
            }
            for (axis, &index) in spec.axes.iter().zip(&tuple) {
                let chosen = &axis.values[index];
                apply_patch(&mut value, &axis.path, chosen).map_err(SweepError::Scenario)?;
                let label = value_label(chosen);
                inputs.insert(axis.path.clone(), label.clone());
                patches.push((axis.path.clone(), label));
            }
            let coordinates = if inputs.is_empty() {
                "single cell".to_string()
            } else {
                inputs
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            jobs.push(CellJob {
                seed: cell_seed(spec.seed, &group.name, &patches),
                inputs,
                coordinates,
                value,
            });
        }
    }
    Ok(jobs)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Checks every declared invariant and returns all violations, not just the
/// first. An empty list means the scenario is runnable.
pub fn validate_config(scenario: &Scenario) -> Vec<String> {
    let mut out = Vec::new();
    let spec = &scenario.spec;
    if spec.name.is_empty() {
        out.push("scenario.name: must not be empty".to_string());
    }
    if spec.max_cells == 0 {
        out.push("scenario.max_cells: must be at least 1".to_string());
    }
    for axis in &spec.axes {
        if axis.values.is_empty() {
            out.push(format!("scenario.axis {:?}: empty value list", axis.path));
        }
        let mut probe = scenario.sections_value.clone();
        if let Some(first) = axis.values.first() {
            if let Err(message) = apply_patch(&mut probe, &axis.path, first) {
                out.push(format!("scenario.axis: {message}"));
            }
        }
    }
    let mut group_names = Vec::new();
    for group in &spec.groups {
        if group.name.is_empty() {
            out.push("scenario.group: name must not be empty".to_string());
        }
        if group_names.contains(&&group.name) {
            out.push(format!("scenario.group {:?}: duplicate name", group.name));
        }
        group_names.push(&group.name);
        let mut probe = scenario.sections_value.clone();
        for (path, value) in &group.patch {
            if let Err(message) = apply_patch(&mut probe, path, value) {
                out.push(format!("scenario.group {:?}: {message}", group.name));
            }
        }
    }
    let cell_count = spec.groups.len().max(1)
        * spec.axes.iter().map(|a| a.values.len().max(1)).product::<usize>();
    if cell_count > spec.max_cells {
        out.push(format!(
            "scenario: {cell_count} cells exceed max_cells {}; raise scenario.max_cells to opt in",
            spec.max_cells
        ));
    }
    if !spec.kind.is_grid() && (!spec.axes.is_empty() || !spec.groups.is_empty()) {
        out.push(format!(
            "scenario: axes and groups are only supported by grid kinds, not {:?}",
            spec.kind
        ));
    }
    if spec.outputs.contains(&OutputKind::Heatmap) {
        match &spec.heatmap {
            None => out.push("scenario: heatmap output requested without [scenario.heatmap]".into()),
            Some(map) => {
                for axis_path in [&map.x, &map.y] {
                    let known = axis_path == "group" && !spec.groups.is_empty()
                        || spec.axes.iter().any(|a| &a.path == axis_path);
                    if !known {
                        out.push(format!("scenario.heatmap: {axis_path:?} is not a swept axis"));
                    }
                }
                if map.values.is_empty() {
                    out.push("scenario.heatmap: values must not be empty".into());
                }
                for field in &map.values {
                    if !CELL_VALUE_FIELDS.contains(&field.as_str()) {
                        out.push(format!("scenario.heatmap: unknown value field {field:?}"));
                    }
                }
            }
        }
    }

    let sections = match scenario.base_sections() {
        Ok(sections) => sections,
        Err(err) => {
            out.push(err.to_string());
            return out;
        }
    };
    validate_sections(spec.kind, &sections, &mut out);
    out
}

fn validate_sections(kind: ScenarioKind, sections: &Sections, out: &mut Vec<String>) {
    let require = |present: bool, name: &str, out: &mut Vec<String>| {
        if !present {
            out.push(format!("[{name}]: required by this scenario kind but missing"));
        }
    };
    match kind {
        ScenarioKind::StageReplay => {
            require(!sections.workload.is_empty(), "workload", out);
        }
        ScenarioKind::AsyncCompare => {
            require(!sections.workload.is_empty(), "workload", out);
            require(sections.pipeline.is_some(), "pipeline", out);
            if let Some(pipeline) = &sections.pipeline {
                if pipeline.mode != PipelineMode::AsyncNoncolocated {
                    out.push("pipeline.mode: async_compare requires async_noncolocated".into());
                }
            }
        }
        ScenarioKind::MethodTable => {
            require(!sections.method.is_empty(), "method", out);
            for name in ["hardware", "model", "sharding", "deployment", "traffic"] {
                require(section_present(sections, name), name, out);
            }
        }
        ScenarioKind::GenerationGrid => {
            for name in ["hardware", "model", "sharding", "deployment", "traffic", "speculation"] {
                require(section_present(sections, name), name, out);
            }
        }
        ScenarioKind::InstanceLagGrid => {
            for name in
                ["hardware", "model", "sharding", "deployment", "traffic", "speculation", "pool_study"]
            {
                require(section_present(sections, name), name, out);
            }
            if let Some(deployment) = &sections.deployment {
                if deployment.gen_gpus.is_none() {
                    out.push("deployment.gen_gpus: required by instance_lag_grid".into());
                }
            }
        }
    }

    if let (Some(hardware), Some(model), Some(sharding)) =
        (&sections.hardware, &sections.model, &sections.sharding)
    {
        let profile = crate::cost::DeploymentProfile {
            hardware: hardware.clone(),
            model: model.clone(),
            sharding: sharding.clone(),
        };
        out.extend(profile.violations().iter().map(|v| format!("deployment profile: {v}")));
    } else {
        for (name, violations) in [
            ("hardware", sections.hardware.as_ref().map(|h| h.violations())),
            ("model", sections.model.as_ref().map(|m| m.violations())),
            ("sharding", sections.sharding.as_ref().map(|s| s.violations())),
        ] {
            if let Some(violations) = violations {
                out.extend(violations.iter().map(|v| format!("[{name}]: {v}")));
            }
        }
    }
    if let Some(deployment) = &sections.deployment {
        if deployment.global_batch == 0 {
            out.push("deployment.global_batch: must be at least 1".into());
        }
        if deployment.num_instances == 0 {
            out.push("deployment.num_instances: must be at least 1".into());
        }
        if deployment.num_instances > deployment.global_batch.max(1) {
            out.push("deployment.num_instances: exceeds global_batch".into());
        }
        if deployment.prompt_tokens == 0 {
            out.push("deployment.prompt_tokens: must be at least 1".into());
        }
        if deployment.gen_gpus == Some(0) {
            out.push("deployment.gen_gpus: must be at least 1".into());
        }
    }
    if let Some(traffic) = &sections.traffic {
        if let Err(err) = traffic.validate() {
            out.push(format!("[traffic]: {err}"));
        }
    }
    if let Some(pipeline) = &sections.pipeline {
        if let Err(err) = pipeline.validate() {
            out.push(format!("[pipeline]: {err}"));
        }
    }
    if let Some(speculation) = &sections.speculation {
        validate_speculation(speculation, out);
    }
    if let Some(pool) = &sections.pool_study {
        if pool.num_batches == 0 {
            out.push("pool_study.num_batches: must be at least 1".into());
        }
        if pool.warmup_batches >= pool.num_batches.max(1) {
            out.push("pool_study.warmup_batches: must be smaller than num_batches".into());
        }
    }
    if let Some(stages) = &sections.step_stages {
        for (value, name) in [
            (stages.data_s, "data_s"),
            (stages.prepare_s, "prepare_s"),
            (stages.logprob_s, "logprob_s"),
            (stages.train_s, "train_s"),
        ] {
            if !value.is_finite() || value < 0.0 {
                out.push(format!("step_stages.{name}: must be finite and non-negative"));
            }
        }
    }
    let mut workload_names = Vec::new();
    for workload in &sections.workload {
        let prefix = format!("workload {:?}", workload.name);
        if workload.name.is_empty() {
            out.push("workload: name must not be empty".into());
        }
        if workload_names.contains(&&workload.name) {
            out.push(format!("{prefix}: duplicate name"));
        }
        workload_names.push(&workload.name);
        for (times, label) in
            [(&workload.baseline, "baseline"), (&workload.accelerated, "accelerated")]
        {
            if let Err(err) = times.validate() {
                out.push(format!("{prefix}.{label}: {err}"));
            }
        }
        if let Some(alpha) = workload.alpha {
            if !alpha.is_finite() || alpha < 1.0 {
                out.push(format!("{prefix}.alpha: must be finite and at least 1"));
            }
        }
    }
    let mut method_names = Vec::new();
    for method in &sections.method {
        let prefix = format!("method {:?}", method.name);
        if method.name.is_empty() {
            out.push("method: name must not be empty".into());
        }
        if method_names.contains(&&method.name) {
            out.push(format!("{prefix}: duplicate name"));
        }
        method_names.push(&method.name);
        if !method.alpha.is_finite() || method.alpha < 1.0 {
            out.push(format!("{prefix}.alpha: must be finite and at least 1"));
        }
        if method.draft_len == 0 && method.alpha != 1.0 {
            out.push(format!("{prefix}: draft_len 0 (no speculation) requires alpha = 1.0"));
        }
        if !method.per_cycle_overhead_s.is_finite() || method.per_cycle_overhead_s < 0.0 {
            out.push(format!("{prefix}.per_cycle_overhead_s: must be finite and non-negative"));
        }
        if let Some(fraction) = method.draft_cost_fraction {
            if !fraction.is_finite() || !(0.0..=1.0).contains(&fraction) {
                out.push(format!("{prefix}.draft_cost_fraction: must lie in [0, 1]"));
            }
        }
    }
}

fn validate_speculation(speculation: &SpeculationSection, out: &mut Vec<String>) {
    if speculation.draft_len == 0 {
        out.push("speculation.draft_len: must be at least 1".into());
    }
    match (speculation.target_alpha, speculation.beta) {
        (None, None) => {
            out.push("speculation: one of target_alpha or beta must be set".into());
        }
        (Some(_), Some(_)) => {
            out.push("speculation: target_alpha and beta are mutually exclusive".into());
        }
        (Some(alpha), None) => {
            if !alpha.is_finite() || alpha < 1.0 {
                out.push("speculation.target_alpha: must be finite and at least 1".into());
            }
        }
        (None, Some(beta)) => {
            if !beta.is_finite() || !(0.0..=1.0).contains(&beta) {
                out.push("speculation.beta: must lie in [0, 1]".into());
            }
        }
    }
    if !speculation.per_cycle_overhead_s.is_finite() || speculation.per_cycle_overhead_s < 0.0 {
        out.push("speculation.per_cycle_overhead_s: must be finite and non-negative".into());
    }
    if let Some(fraction) = speculation.draft_cost_fraction {
        if !fraction.is_finite() || !(0.0..=1.0).contains(&fraction) {
            out.push("speculation.draft_cost_fraction: must lie in [0, 1]".into());
        }
    }
}

fn section_present(sections: &Sections, name: &str) -> bool {
    match name {
        "hardware" => sections.hardware.is_some(),
        "model" => sections.model.is_some(),
        "sharding" => sections.sharding.is_some(),
        "deployment" => sections.deployment.is_some(),
        "traffic" => sections.traffic.is_some(),
        "speculation" => sections.speculation.is_some(),
        "pool_study" => sections.pool_study.is_some(),
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

/// Evaluates every cell of the scenario. The result is identical for any
/// thread count or axis ordering; see the module docs for the seeding scheme.
pub fn run_scenario(scenario: &Scenario) -> Result<SweepResult, SweepError> {
    use rayon::prelude::*;

    let violations = validate_config(scenario);
    if !violations.is_empty() {
        return Err(SweepError::InvalidConfig(violations));
    }
    let spec = &scenario.spec;
    let want_curves = spec.outputs.contains(&OutputKind::Curve);
    let mut occupancy_curves = Vec::new();
    let mut timelines = Vec::new();

    let (input_columns, cells) = match spec.kind {
        ScenarioKind::StageReplay => {
            let sections = scenario.base_sections()?;
            (vec!["workload".to_string()], eval::stage_replay(&sections)?)
        }
        ScenarioKind::AsyncCompare => {
            let sections = scenario.base_sections()?;
            let (cells, traces) = eval::async_compare(&sections, want_curves)?;
            timelines = traces;
            (
                vec!["workload".to_string(), "mode".to_string(), "phase".to_string()],
                cells,
            )
        }
        ScenarioKind::MethodTable => {
            let sections = scenario.base_sections()?;
            let (cells, curves) = eval::method_table(&sections, spec.seed, want_curves)?;
            occupancy_curves = curves;
            (vec!["method".to_string()], cells)
        }
        ScenarioKind::GenerationGrid | ScenarioKind::InstanceLagGrid => {
            let jobs = grid_jobs(scenario)?;
            let cells = jobs
                .into_par_iter()
                .map(|job| {
                    let sections = typed_sections(&job.value, &job.coordinates)?;
                    Ok(match spec.kind {
                        ScenarioKind::GenerationGrid => {
                            eval::generation_cell(&sections, job.seed, job.inputs)
                        }
                        _ => eval::instance_lag_cell(&sections, job.seed, job.inputs),
                    })
                })
                .collect::<Result<Vec<_>, SweepError>>()?;
            if want_curves {
                occupancy_curves =
                    eval::base_occupancy(&scenario.base_sections()?, spec.seed)?;
            }
            let mut columns = Vec::new();
            if !spec.groups.is_empty() {
                columns.push("group".to_string());
            }
            columns.extend(spec.axes.iter().map(|a| a.path.clone()));
            (columns, cells)
        }
    };

    Ok(SweepResult {
        scenario_name: spec.name.clone(),
        kind: spec.kind,
        input_columns,
        cells,
        provenance: Provenance {
            config_sha256: scenario.config_sha256.clone(),
            seed: spec.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        occupancy_curves,
        timelines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY_GRID: &str = r#"
        [scenario]
        name = "tiny"
        kind = "generation_grid"
        seed = 9

        [[scenario.axis]]
        path = "speculation.draft_len"
        values = [2, 3]

        [[scenario.axis]]
        path = "speculation.target_alpha"
        values = [2.0, 5.0]

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
        global_batch = 64
        num_instances = 2
        prompt_tokens = 64

        [traffic]
        kind = "constant"
        len = 256
        max_tokens = 256

        [speculation]
        draft_len = 3
        target_alpha = 2.0
    "#;

    #[test]
    fn tiny_grid_runs_and_masks_infeasible_cells() {
        let scenario = Scenario::from_toml_str(TINY_GRID).unwrap();
        let result = run_scenario(&scenario).unwrap();
        assert_eq!(result.cells.len(), 4);
        // alpha 5.0 exceeds k + 1 = 3 at draft_len 2 only.
        let blocked = result
            .find_cell(&[("speculation.draft_len", "2"), ("speculation.target_alpha", "5.0")])
            .unwrap();
        assert!(!blocked.feasible);
        assert!(blocked.reason.as_deref().unwrap().contains("exceeds"));
        assert!(blocked.rollout_speedup.is_none());
        for cell in result.cells.iter().filter(|c| c.feasible) {
            assert!(cell.rollout_speedup.unwrap() >= 1.0 - 1e-9);
            assert!(cell.measured_alpha.unwrap() >= 1.0);
        }
        assert_eq!(result.input_columns.len(), 2);
    }

    #[test]
    fn axis_permutation_permutes_rows_but_not_values() {
        let scenario = Scenario::from_toml_str(TINY_GRID).unwrap();
        let forward = run_scenario(&scenario).unwrap();
        let reversed_text = TINY_GRID.replace("values = [2, 3]", "values = [3, 2]");
        let reversed = run_scenario(&Scenario::from_toml_str(&reversed_text).unwrap()).unwrap();
        for cell in &forward.cells {
            let pairs: Vec<(&str, &str)> = cell
                .inputs
                .iter()
                .map(|(k, v)| (k.as_str(), v.as_str()))
                .collect();
            let twin = reversed.find_cell(&pairs).expect("same coordinates exist");
            assert_eq!(cell.rollout_speedup, twin.rollout_speedup);
            assert_eq!(cell.feasible, twin.feasible);
        }
    }

    #[test]
    fn cell_seed_ignores_axis_order_but_not_coordinates() {
        let a = cell_seed(7, "g", &[("x".into(), "1".into()), ("y".into(), "2".into())]);
        let b = cell_seed(7, "g", &[("y".into(), "2".into()), ("x".into(), "1".into())]);
        let c = cell_seed(7, "g", &[("x".into(), "2".into()), ("y".into(), "1".into())]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, cell_seed(8, "g", &[("x".into(), "1".into()), ("y".into(), "2".into())]));
        assert_ne!(a, cell_seed(7, "h", &[("x".into(), "1".into()), ("y".into(), "2".into())]));
    }

    #[test]
    fn patching_rejects_unknown_paths() {
        let scenario = Scenario::from_toml_str(TINY_GRID).unwrap();
        let mut probe = scenario.sections_value.clone();
        let value = toml::Value::Integer(1);
        assert!(apply_patch(&mut probe, "speculation.draft_len", &value).is_ok());
        assert!(apply_patch(&mut probe, "speculation.unknown", &value).is_err());
        assert!(apply_patch(&mut probe, "missing.table", &value).is_err());
    }

    #[test]
    fn validation_collects_multiple_violations() {
        let text = TINY_GRID
            .replace("tensor_parallel = 4", "tensor_parallel = 3")
            .replace("prompt_tokens = 64", "prompt_tokens = 0");
        let scenario = Scenario::from_toml_str(&text).unwrap();
        let violations = validate_config(&scenario);
        assert!(violations.len() >= 2, "{violations:?}");
        assert!(matches!(
            run_scenario(&scenario),
            Err(SweepError::InvalidConfig(list)) if list.len() >= 2
        ));
    }

    #[test]
    fn cell_cap_is_enforced_but_overridable() {
        let text = TINY_GRID.replace("seed = 9", "seed = 9\nmax_cells = 3");
        let scenario = Scenario::from_toml_str(&text).unwrap();
        let violations = validate_config(&scenario);
        assert!(violations.iter().any(|v| v.contains("max_cells")), "{violations:?}");
        let text = TINY_GRID.replace("seed = 9", "seed = 9\nmax_cells = 4");
        assert!(validate_config(&Scenario::from_toml_str(&text).unwrap()).is_empty());
    }

    #[test]
    fn cross_indices_are_row_major() {
        assert_eq!(
            cross_indices(&[2, 3]),
            vec![
                vec![0, 0],
                vec![0, 1],
                vec![0, 2],
                vec![1, 0],
                vec![1, 1],
                vec![1, 2]
            ]
        );
        assert_eq!(cross_indices(&[]), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn shipped_presets_parse_and_validate_clean() {
        for name in preset_names() {
            let scenario = Scenario::preset(name).unwrap();
            assert_eq!(&scenario.spec.name, name);
            let violations = validate_config(&scenario);
            assert!(violations.is_empty(), "{name}: {violations:?}");
        }
        assert!(matches!(
            Scenario::preset("nonexistent"),
            Err(SweepError::UnknownPreset(_))
        ));
    }
}
