//! Offline-profiled latency and memory tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::workflow::{OperatorKind, ResourceClass};

pub const GIB: u64 = 1 << 30;

/// Profile of one (operator kind, model, class) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfEntry {
    pub op_kind: OperatorKind,
    pub model_ref: String,
    pub resource_class: ResourceClass,
    pub base_latency_s: f64,
    pub per_item_latency_s: f64,
    /// Sublinear batching exponent, in (0, 1].
    pub alpha: f64,
    pub load_time_s: f64,
    /// Resident weight footprint, excluding per-item activations.
    pub mem_footprint_bytes: u64,
}

impl PerfEntry {
    /// Predicted execution time of a batch of `n`.
    pub fn duration(&self, n: usize) -> f64 {
        self.base_latency_s + self.per_item_latency_s * (n as f64).powf(self.alpha)
    }

    /// Items per second at batch size `n`.
    pub fn throughput(&self, n: usize) -> f64 {
        n as f64 / self.duration(n)
    }
}

type PerfKey = (OperatorKind, String, ResourceClass);

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PerfModel {
    entries: BTreeMap<String, PerfEntry>,
}

fn key_str(k: &PerfKey) -> String {
    format!("{}|{}|{}", k.0, k.1, k.2)
}

impl PerfModel {
    pub fn insert(&mut self, entry: PerfEntry) {
        let key = (entry.op_kind, entry.model_ref.clone(), entry.resource_class);
        self.entries.insert(key_str(&key), entry);
    }

    pub fn get(&self, kind: OperatorKind, model_ref: &str, class: ResourceClass) -> Option<&PerfEntry> {
        self.entries.get(&key_str(&(kind, model_ref.to_string(), class)))
    }

    pub fn entries(&self) -> impl Iterator<Item = &PerfEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reference tables for the models used by the bundled workloads.
    pub fn reference() -> Self {
        use OperatorKind::*;
        // (kind, model, footprint GiB, base s, per-item s, alpha, load s), on H100.
        let rows: &[(OperatorKind, &str, f64, f64, f64, f64, f64)] = &[
            (Inference, "llama-3.1-8b", 16.0, 1.5, 3.0, 0.55, 12.0),
            (Inference, "llama-3.2-3b", 6.5, 0.8, 1.6, 0.55, 6.0),
            (Inference, "llama-3.2-1b", 2.5, 0.5, 0.8, 0.55, 3.0),
            (Eval, "llama-3.1-8b", 16.0, 1.5, 2.4, 0.6, 12.0),
            (Eval, "llama-3.2-3b", 6.5, 1.0, 1.6, 0.6, 6.0),
            (Eval, "llama-3.2-1b", 2.5, 0.6, 1.0, 0.6, 3.0),
            (DataPrep, "text-pipeline", 0.5, 0.3, 0.6, 0.7, 1.0),
            (ToolCall, "tool-runtime", 0.25, 0.2, 1.0, 0.9, 1.0),
            (Sft, "llama-3.1-8b", 70.0, 20.0, 90.0, 0.85, 25.0),
            (Sft, "llama-3.1-8b-lora", 22.0, 10.0, 45.0, 0.85, 15.0),
            (Dpo, "llama-3.2-3b", 28.0, 12.0, 50.0, 0.85, 12.0),
            (Ppo, "llama-3.2-1b", 14.0, 15.0, 60.0, 0.85, 8.0),
        ];
        let mut model = PerfModel::default();
        for &(kind, name, gib, base, per_item, alpha, load) in rows {
            for class in ResourceClass::ALL {
                let (slow, slow_load) = match class {
                    ResourceClass::H100_94g => (1.0, 1.0),
                    ResourceClass::Rtx4090_24g | ResourceClass::Rtx4090_48g => (1.8, 1.15),
                };
                model.insert(PerfEntry {
                    op_kind: kind,
                    model_ref: name.to_string(),
                    resource_class: class,
                    base_latency_s: base * slow,
                    per_item_latency_s: per_item * slow,
                    alpha,
                    load_time_s: load * slow_load,
                    mem_footprint_bytes: (gib * GIB as f64) as u64,
                });
            }
        }
        model
    }
}

/// Per-item activation memory by operator kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryModel {
    pub activation_bytes_per_item: BTreeMap<OperatorKind, u64>,
}

impl Default for MemoryModel {
    fn default() -> Self {
        use OperatorKind::*;
        let mib = |m: u64| m << 20;
        Self {
            activation_bytes_per_item: [
                (Inference, mib(512)),
                (Eval, mib(512)),
                (DataPrep, mib(50)),
                (ToolCall, mib(20)),
                (Sft, mib(1536)),
                (Dpo, mib(1024)),
                (Ppo, mib(768)),
            ]
            .into_iter()
            .collect(),
        }
    }
}

impl MemoryModel {
    pub fn activation(&self, kind: OperatorKind) -> u64 {
        self.activation_bytes_per_item.get(&kind).copied().unwrap_or(0)
    }
}

/// Everything the scheduler and workers need to predict time and memory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResourceModel {
    pub perf: PerfModel,
    pub memory: MemoryModel,
    /// Remote fetch bandwidth into a worker's local cache.
    pub fetch_bandwidth_bytes_per_s: f64,
}

impl Default for ResourceModel {
    fn default() -> Self {
        Self {
            perf: PerfModel::reference(),
            memory: MemoryModel::default(),
            fetch_bandwidth_bytes_per_s: 1e9,
        }
    }
}

impl ResourceModel {
    pub fn fetch_seconds(&self, bytes: u64) -> f64 {
        bytes as f64 / self.fetch_bandwidth_bytes_per_s
    }
}
