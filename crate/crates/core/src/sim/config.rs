//! Scenario files: everything that determines a run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::control::{Ablation, AutoscaleConfig, ControlConfig, Policy, PoolEntry, UtilityWeights};
use crate::worker::{ClassProfile, PerfEntry, ResourceModel, Visibility, GIB};
use crate::workflow::{OperatorKind, ResourceClass};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("bad override `{0}`: expected key=value")]
    BadOverride(String),
}

/// Utility weights as a preset name or explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightsSpec {
    Preset(String),
    Explicit(UtilityWeights),
}

impl Default for WeightsSpec {
    fn default() -> Self {
        WeightsSpec::Preset("balanced".into())
    }
}

impl WeightsSpec {
    pub fn resolve(&self) -> Result<UtilityWeights, ConfigError> {
        match self {
            WeightsSpec::Preset(name) => UtilityWeights::preset(name)
                .ok_or_else(|| ConfigError::Invalid(format!("unknown weight preset `{name}`"))),
            WeightsSpec::Explicit(w) => Ok(*w),
        }
    }
}

/// One hardware class in the fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class: ResourceClass,
    /// Workers present at time zero under elastic scaling.
    #[serde(default)]
    pub initial: usize,
    /// Upper bound; static fleets run with exactly this many.
    pub max_count: usize,
    #[serde(default)]
    pub cost_rate: Option<f64>,
    #[serde(default)]
    pub idle_power_watts: Option<f64>,
    #[serde(default)]
    pub peak_power_watts: Option<f64>,
    #[serde(default)]
    pub visibility: Visibility,
}

impl ClassSpec {
    pub fn profile(&self) -> ClassProfile {
        let r = ClassProfile::reference(self.class);
        ClassProfile {
            class: self.class,
            cost_rate: self.cost_rate.unwrap_or(r.cost_rate),
            idle_power_watts: self.idle_power_watts.unwrap_or(r.idle_power_watts),
            peak_power_watts: self.peak_power_watts.unwrap_or(r.peak_power_watts),
        }
    }
}

fn reference_fleet() -> Vec<ClassSpec> {
    ResourceClass::ALL
        .into_iter()
        .map(|class| ClassSpec {
            class,
            initial: 2,
            max_count: 2,
            cost_rate: None,
            idle_power_watts: None,
            peak_power_watts: None,
            visibility: Visibility::Shared,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerfSpec {
    /// Start from the bundled tables.
    pub reference: bool,
    /// Added or replacing rows.
    pub entries: Vec<PerfEntry>,
    /// Per-item activation memory overrides, MiB.
    pub activation_mib: BTreeMap<OperatorKind, u64>,
    pub fetch_bandwidth_bytes_per_s: Option<f64>,
}

impl Default for PerfSpec {
    fn default() -> Self {
        Self { reference: true, entries: Vec::new(), activation_mib: BTreeMap::new(), fetch_bandwidth_bytes_per_s: None }
    }
}

impl PerfSpec {
    pub fn build(&self) -> ResourceModel {
        let mut model = ResourceModel::default();
        if !self.reference {
            model.perf = Default::default();
        }
        for e in &self.entries {
            model.perf.insert(e.clone());
        }
        for (k, mib) in &self.activation_mib {
            model.memory.activation_bytes_per_item.insert(*k, mib << 20);
        }
        if let Some(bw) = self.fetch_bandwidth_bytes_per_s {
            model.fetch_bandwidth_bytes_per_s = bw;
        }
        model
    }
}

/// Control-plane knobs other than policy, weights, ablation and fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tuning {
    pub max_batch: BTreeMap<OperatorKind, usize>,
    pub admission_depth: usize,
    pub tick_s: f64,
    pub heartbeat_interval_s: f64,
    pub watchdog_period_s: f64,
    pub speculation: bool,
    pub speculation_factor: f64,
    pub speculation_min_samples: usize,
    pub misfit_margin_gib: f64,
    pub autoscale: AutoscaleConfig,
}

impl Default for Tuning {
    fn default() -> Self {
        let c = ControlConfig::default();
        Self {
            max_batch: c.max_batch,
            admission_depth: c.admission_depth,
            tick_s: c.tick_s,
            heartbeat_interval_s: c.heartbeat_interval_s,
            watchdog_period_s: c.watchdog_period_s,
            speculation: c.speculation,
            speculation_factor: c.speculation_factor,
            speculation_min_samples: c.speculation_min_samples,
            misfit_margin_gib: c.misfit_margin_bytes as f64 / GIB as f64,
            autoscale: c.autoscale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arrival {
    /// Fixed inter-arrival gap.
    Constant { qpm: f64 },
    /// Poisson arrivals whose rate decays geometrically from `start_qpm` to
    /// `end_qpm` over `over_s` seconds, then stays at `end_qpm`.
    ExpDecay { start_qpm: f64, end_qpm: f64, over_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    A,
    B,
}

/// A hand-written workflow submitted `copies` times. String values
/// `"$input"` (unique per copy), `"$shared"` (one blob for all copies) and
/// `"$copy"` (the copy index) are substituted before compilation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitWorkflow {
    #[serde(default)]
    pub at_s: f64,
    #[serde(default = "one")]
    pub copies: usize,
    /// Gap between successive copies.
    #[serde(default)]
    pub spacing_s: f64,
    pub document: serde_json::Value,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadSpec {
    Generated {
        group: Group,
        count: usize,
        arrival: Arrival,
        #[serde(default = "half")]
        shared_prefix_prob: f64,
        #[serde(default = "four")]
        tenants: usize,
    },
    Explicit { workflows: Vec<ExplicitWorkflow> },
}

fn half() -> f64 {
    0.5
}

fn four() -> usize {
    4
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec::Explicit { workflows: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Crash,
    SilentHang,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::Crash => "crash",
            FailureKind::SilentHang => "silent_hang",
        }
    }
}

/// `worker` is a worker id (`w003`) or `class:<class>` for the lowest-id
/// live worker of that class at injection time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSpec {
    pub worker: String,
    pub at_s: f64,
    pub kind: FailureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_policy")]
    pub policy: Policy,
    #[serde(default)]
    pub weights: WeightsSpec,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default = "reference_fleet")]
    pub fleet: Vec<ClassSpec>,
    #[serde(default)]
    pub perf: PerfSpec,
    #[serde(default)]
    pub tuning: Tuning,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub failures: Vec<FailureSpec>,
    /// Check control-plane bookkeeping after every event (slow).
    #[serde(default)]
    pub check_invariants: bool,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_policy() -> Policy {
    Policy::FlowMesh
}

impl ScenarioConfig {
    /// A scenario with the reference fleet and no workload.
    pub fn new(duration_s: f64) -> Self {
        serde_json::from_value(serde_json::json!({ "duration_s": duration_s })).expect("minimal scenario")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Parse with `key.path=value` overrides applied to the raw document first.
    pub fn from_json_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: serde_json::Value = serde_json::from_str(text)?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Ok(serde_json::from_value(doc)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn resources(&self) -> ResourceModel {
        self.perf.build()
    }

    pub fn control_config(&self) -> Result<ControlConfig, ConfigError> {
        let t = &self.tuning;
        let c = ControlConfig {
            policy: self.policy,
            weights: self.weights.resolve()?,
            ablation: self.ablation,
            max_batch: t.max_batch.clone(),
            admission_depth: t.admission_depth,
            tick_s: t.tick_s,
            heartbeat_interval_s: t.heartbeat_interval_s,
            watchdog_period_s: t.watchdog_period_s,
            speculation: t.speculation,
            speculation_factor: t.speculation_factor,
            speculation_min_samples: t.speculation_min_samples,
            misfit_margin_bytes: (t.misfit_margin_gib * GIB as f64) as u64,
            autoscale: t.autoscale.clone(),
            pool: self
                .fleet
                .iter()
                .map(|c| PoolEntry { profile: c.profile(), max_count: c.max_count, visibility: c.visibility.clone() })
                .collect(),
        };
        c.validate().map_err(ConfigError::Invalid)?;
        Ok(c)
    }

    /// Workers present at time zero: the initial counts when elastic,
    /// otherwise the whole pool.
    pub fn initial_fleet(&self) -> Result<Vec<(ClassProfile, Visibility)>, ConfigError> {
        let elastic = self.control_config()?.elastic();
        Ok(self
            .fleet
            .iter()
            .flat_map(|c| {
                let n = if elastic { c.initial.min(c.max_count) } else { c.max_count };
                std::iter::repeat_n((c.profile(), c.visibility.clone()), n)
            })
            .collect())
    }

    /// Schedule a failure. The selector is a worker id or `class:<class>`;
    /// whether it matches a live worker is only known at injection time.
    pub fn inject_failure(&mut self, worker: &str, at_s: f64, kind: FailureKind) -> Result<(), ConfigError> {
        valid_selector(worker)?;
        if !(at_s >= 0.0 && at_s < self.duration_s) {
            return Err(ConfigError::Invalid(format!("failure at {at_s} s is outside [0, duration_s)")));
        }
        self.failures.push(FailureSpec { worker: worker.to_string(), at_s, kind });
        Ok(())
    }

    /// Semantic checks beyond the schema.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return invalid("duration_s must be positive".into());
        }
        let control = self.control_config()?;
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.fleet {
            if !seen.insert((c.class, c.visibility.clone())) {
                return invalid(format!("fleet lists {} ({}) twice", c.class, c.visibility));
            }
        }
        if self.initial_fleet()?.is_empty() {
            return invalid("fleet starts with no workers".into());
        }
        if control.elastic() && self.initial_fleet()?.len() < control.autoscale.min_workers {
            return invalid("initial fleet is below autoscale.min_workers".into());
        }
        if self.tuning.misfit_margin_gib.is_nan() || self.tuning.misfit_margin_gib < 0.0 {
            return invalid("misfit_margin_gib must be non-negative".into());
        }
        match &self.workload {
            WorkloadSpec::Generated { count, arrival, shared_prefix_prob, tenants, .. } => {
                if *count == 0 {
                    return invalid("workload.count must be positive".into());
                }
                if !(0.0..=1.0).contains(shared_prefix_prob) {
                    return invalid("shared_prefix_prob must be in [0, 1]".into());
                }
                if *tenants == 0 {
                    return invalid("workload.tenants must be positive".into());
                }
                let ok = match *arrival {
                    Arrival::Constant { qpm } => qpm > 0.0 && qpm.is_finite(),
                    Arrival::ExpDecay { start_qpm, end_qpm, over_s } => {
                        start_qpm > 0.0 && end_qpm > 0.0 && over_s > 0.0 && start_qpm.is_finite() && end_qpm.is_finite()
                    }
                };
                if !ok {
                    return invalid("arrival rates and horizon must be positive".into());
                }
            }
            WorkloadSpec::Explicit { workflows } => {
                for w in workflows {
                    if w.copies == 0 || w.at_s < 0.0 || w.spacing_s < 0.0 {
                        return invalid("explicit workflows need copies >= 1 and non-negative times".into());
                    }
                }
            }
        }
        for f in &self.failures {
            valid_selector(&f.worker)?;
            if !(f.at_s >= 0.0 && f.at_s < self.duration_s) {
                return invalid(format!("failure at {} s is outside [0, duration_s)", f.at_s));
            }
        }
        Ok(())
    }
}

fn valid_selector(s: &str) -> Result<(), ConfigError> {
    let ok = match s.strip_prefix("class:") {
        Some(class) => class.parse::<ResourceClass>().is_ok(),
        None => s.len() > 1 && s.starts_with('w') && s[1..].bytes().all(|b| b.is_ascii_digit()),
    };
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("unknown failure selector `{s}`")))
    }
}

/// Set `a.b.c=value` in a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(doc: &mut serde_json::Value, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| ConfigError::BadOverride(spec.into()))?;
    if path.is_empty() {
        return Err(ConfigError::BadOverride(spec.into()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
    let mut cur = doc;
    for key in path.split('.') {
        if let (Some(items), Ok(i)) = (cur.as_array(), key.parse::<usize>()) {
            if i >= items.len() {
                return Err(ConfigError::BadOverride(format!("{spec}: index {i} out of range")));
            }
            cur = &mut cur.as_array_mut().expect("array")[i];
            continue;
        }
        if !cur.is_object() {
            *cur = serde_json::Value::Object(Default::default());
        }
        cur = cur.as_object_mut().expect("object").entry(key).or_insert(serde_json::Value::Null);
    }
    *cur = value;
    Ok(())
}
