//! Deterministic discrete-event simulation: scenarios, workloads, the
//! engine loop, and metrics.

pub mod config;
pub mod diagnose;
pub mod engine;
pub mod metrics;
pub mod workload;

pub use config::{
    apply_override, Arrival, ClassSpec, ConfigError, ExplicitWorkflow, FailureKind, FailureSpec, Group, PerfSpec,
    ScenarioConfig, Tuning, WeightsSpec, WorkloadSpec,
};
pub use diagnose::{diagnose, parse_scenario, Diagnostic};
pub use engine::{run_scenario, run_with_backend, RunOutput, SimError};
pub use metrics::{cdp, compute_metrics, edp, metrics_from_ndjson, FailureDetection, MetricsError, MetricsReport, Stats, TaskRecord, WorkerUsage};
pub use workload::{arrival_rate, arrival_times, build_workload, generate_workload, TimedWorkflow, Workload};

#[cfg(test)]
mod tests;
