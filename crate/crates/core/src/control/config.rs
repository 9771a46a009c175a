use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::worker::{ClassProfile, Visibility, GIB};
use crate::workflow::{OperatorKind, ResourceClass};

/// Weights of the placement utility `w_t·T_eff − w_c·C + w_l·G_loc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights {
    pub w_t: f64,
    pub w_c: f64,
    pub w_l: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        Self { w_t: 1.0, w_c: 1.0, w_l: 0.5 }
    }
}

impl UtilityWeights {
    pub fn cost_first() -> Self {
        Self { w_t: 0.5, w_c: 2.0, w_l: 0.5 }
    }

    pub fn performance_first() -> Self {
        Self { w_t: 2.0, w_c: 0.25, w_l: 0.5 }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "balanced" => Some(Self::default()),
            "cost_first" => Some(Self::cost_first()),
            "performance_first" => Some(Self::performance_first()),
            _ => None,
        }
    }

    pub fn scaled(self, c: f64) -> Self {
        Self { w_t: self.w_t * c, w_c: self.w_c * c, w_l: self.w_l * c }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [self.w_t, self.w_c, self.w_l];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err("utility weights must be finite and non-negative".into());
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err("utility weights must not all be zero".into());
        }
        Ok(())
    }

    /// Absolute tolerance for treating two utilities as tied. Proportional to
    /// the weights, so scaling them never changes which candidates tie.
    pub fn tie_tolerance(&self) -> f64 {
        1e-9 * (self.w_t + self.w_c + self.w_l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "flowmesh")]
    FlowMesh,
    #[serde(rename = "mf_first_fit")]
    MfFirstFit,
    #[serde(rename = "ds_static")]
    DsStatic,
    #[serde(rename = "dr_round_robin")]
    DrRoundRobin,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::FlowMesh, Policy::MfFirstFit, Policy::DsStatic, Policy::DrRoundRobin];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::FlowMesh => "flowmesh",
            Policy::MfFirstFit => "mf_first_fit",
            Policy::DsStatic => "ds_static",
            Policy::DrRoundRobin => "dr_round_robin",
        }
    }

    pub fn is_baseline(self) -> bool {
        self != Policy::FlowMesh
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

/// Feature switches for the ablation study. All on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Identity dedup, CAS skip and signature batching.
    pub consolidation: bool,
    /// Autoscaling; off keeps the full pool for the whole run.
    pub elasticity: bool,
    /// Utility-based placement; off falls back to round-robin.
    pub multi_objective: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self { consolidation: true, elasticity: true, multi_objective: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoscaleConfig {
    /// Scale up when pending ÷ capacity exceeds this.
    pub pending_ratio: f64,
    pub warmup_s: f64,
    pub idle_timeout_s: f64,
    pub min_workers: usize,
}

impl Default for AutoscaleConfig {
    fn default() -> Self {
        Self { pending_ratio: 2.0, warmup_s: 45.0, idle_timeout_s: 60.0, min_workers: 1 }
    }
}

/// One hardware class available to the fleet and how many of it may exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    #[serde(flatten)]
    pub profile: ClassProfile,
    pub max_count: usize,
    #[serde(default)]
    pub visibility: Visibility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub policy: Policy,
    pub weights: UtilityWeights,
    pub ablation: Ablation,
    /// Largest batch per operator kind.
    pub max_batch: BTreeMap<OperatorKind, usize>,
    /// Batches a worker may hold at once, running plus queued.
    pub admission_depth: usize,
    pub tick_s: f64,
    pub heartbeat_interval_s: f64,
    pub watchdog_period_s: f64,
    pub speculation: bool,
    pub speculation_factor: f64,
    pub speculation_min_samples: usize,
    /// Added to an observed shortfall when a batch does not fit.
    pub misfit_margin_bytes: u64,
    pub autoscale: AutoscaleConfig,
    pub pool: Vec<PoolEntry>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            policy: Policy::FlowMesh,
            weights: UtilityWeights::default(),
            ablation: Ablation::default(),
            max_batch: OperatorKind::ALL
                .into_iter()
                .map(|k| (k, if k.is_training() { 12 } else { 24 }))
                .collect(),
            admission_depth: 2,
            tick_s: 1.0,
            heartbeat_interval_s: 5.0,
            watchdog_period_s: 30.0,
            speculation: true,
            speculation_factor: 2.0,
            speculation_min_samples: 20,
            misfit_margin_bytes: 2 * GIB,
            autoscale: AutoscaleConfig::default(),
            pool: ResourceClass::ALL
                .into_iter()
                .map(|c| PoolEntry { profile: ClassProfile::reference(c), max_count: 2, visibility: Visibility::Shared })
                .collect(),
        }
    }
}

impl ControlConfig {
    pub fn max_batch_for(&self, kind: OperatorKind) -> usize {
        if !self.batching() {
            return 1;
        }
        self.max_batch.get(&kind).copied().unwrap_or(1).max(1)
    }

    /// Whether signature batching is in effect.
    pub fn batching(&self) -> bool {
        self.policy == Policy::FlowMesh && self.ablation.consolidation
    }

    pub fn dedup(&self) -> bool {
        self.policy == Policy::FlowMesh && self.ablation.consolidation
    }

    pub fn elastic(&self) -> bool {
        self.policy == Policy::FlowMesh && self.ablation.elasticity
    }

    pub fn speculates(&self) -> bool {
        self.policy == Policy::FlowMesh && self.speculation
    }

    pub fn pool_profile(&self, class: ResourceClass) -> Option<&PoolEntry> {
        self.pool.iter().find(|p| p.profile.class == class)
    }

    pub fn pool_size(&self) -> usize {
        self.pool.iter().map(|p| p.max_count).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        self.weights.validate()?;
        if self.pool.is_empty() || self.pool_size() == 0 {
            return Err("fleet pool is empty".into());
        }
        for p in &self.pool {
            let pr = &p.profile;
            if pr.cost_rate < 0.0 || !pr.cost_rate.is_finite() {
                return Err(format!("{}: cost_rate must be non-negative", pr.class));
            }
            if !(0.0..=pr.peak_power_watts).contains(&pr.idle_power_watts) {
                return Err(format!("{}: need 0 <= idle_power <= peak_power", pr.class));
            }
        }
        if self.admission_depth == 0 {
            return Err("admission_depth must be at least 1".into());
        }
        for (name, v) in [
            ("tick_s", self.tick_s),
            ("heartbeat_interval_s", self.heartbeat_interval_s),
            ("watchdog_period_s", self.watchdog_period_s),
            ("speculation_factor", self.speculation_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.autoscale.min_workers == 0 {
            return Err("autoscale.min_workers must be at least 1".into());
        }
        Ok(())
    }
}
