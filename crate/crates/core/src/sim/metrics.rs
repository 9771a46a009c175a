//! Run metrics, computed from the event log alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cas::{PublishOutcome, EXECUTED_BY_CACHE};
use crate::control::p95;
use crate::events::{Event, EventLog, LogParseError, LogRecord};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("event log is truncated: {0}")]
    TruncatedLog(String),
    #[error(transparent)]
    Parse(#[from] LogParseError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub workflow_id: String,
    pub tenant_id: String,
    pub operators: usize,
    pub submitted_at: f64,
    pub finished_at: Option<f64>,
    pub latency_s: Option<f64>,
    pub outcome: String,
    /// Operators this workflow ran itself.
    pub executed: usize,
    /// Operators served from another execution or the store.
    pub cached: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: Option<f64>,
    pub p50: Option<f64>,
    pub p95: Option<f64>,
    pub max: Option<f64>,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let median_rank = (0.5 * v.len() as f64).ceil() as usize;
        Self {
            count: v.len(),
            mean: Some(values.iter().sum::<f64>() / v.len() as f64),
            p50: Some(v[median_rank.max(1) - 1]),
            p95: p95(&v),
            max: v.last().copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerUsage {
    pub worker: String,
    pub class: String,
    pub cost_rate: f64,
    pub provisioned_at: f64,
    pub ended_at: f64,
    pub cost: f64,
    pub energy_j: f64,
    pub busy_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureDetection {
    pub worker: String,
    pub kind: String,
    pub injected_at: f64,
    pub detected_at: Option<f64>,
    pub detection_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub policy: String,
    pub seed: u64,
    pub run_end_s: f64,
    pub workflows_submitted: usize,
    pub workflows_completed: usize,
    pub workflows_failed: usize,
    /// Completed workflows; the denominator of CDP and EDP.
    pub task_count: usize,
    /// End-to-end latency of each completed workflow, in submission order.
    pub latencies_s: Vec<f64>,
    pub avg_latency_s: Option<f64>,
    pub latency: Stats,
    /// Completed workflows per minute between first submission and last completion.
    pub throughput_per_min: Option<f64>,
    pub total_cost: f64,
    pub total_energy_j: f64,
    pub cdp: Option<f64>,
    pub edp: Option<f64>,
    pub queueing: Stats,
    pub operator_completions: usize,
    /// Published executions, speculative replicas included.
    pub executions: usize,
    pub cache_completions: usize,
    /// Consumer completions minus executions.
    pub dedup_savings: i64,
    pub batch_occupancy: BTreeMap<usize, usize>,
    /// (time, active workers) at every change.
    pub active_workers: Vec<(f64, usize)>,
    pub peak_active_workers: usize,
    pub failures: Vec<FailureDetection>,
    pub misfits: usize,
    pub speculations: usize,
    pub discarded_duplicates: usize,
    pub scale_ups: usize,
    pub retirements: usize,
    pub workers: Vec<WorkerUsage>,
    pub tasks: Vec<TaskRecord>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per workflow.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for t in &self.tasks {
            w.serialize(t).expect("csv row");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
    }
}

/// Cost–delay product: cost per completed task times average latency.
pub fn cdp(total_cost: f64, tasks: usize, avg_latency: f64) -> f64 {
    (total_cost / tasks as f64) * avg_latency
}

/// Energy–delay product: energy per completed task times average latency.
pub fn edp(total_energy: f64, tasks: usize, avg_latency: f64) -> f64 {
    (total_energy / tasks as f64) * avg_latency
}

struct WorkerTrack {
    class: String,
    cost_rate: f64,
    provisioned_at: f64,
    ended_at: Option<f64>,
    watts: f64,
    since: f64,
    energy: f64,
    busy: f64,
}

impl WorkerTrack {
    fn set_power(&mut self, t: f64, watts: f64) {
        self.energy += self.watts * (t - self.since);
        self.watts = watts;
        self.since = t;
    }
}

/// Parse an NDJSON event log and compute its report.
pub fn metrics_from_ndjson(text: &str) -> Result<MetricsReport, MetricsError> {
    compute_metrics(&EventLog::parse(text)?)
}

/// Derive every report field from a complete event log.
pub fn compute_metrics(records: &[LogRecord]) -> Result<MetricsReport, MetricsError> {
    let (scenario, policy, seed) = match records.first().map(|r| &r.event) {
        Some(Event::RunStart { scenario, policy, seed }) => (scenario.clone(), policy.clone(), *seed),
        _ => return Err(MetricsError::TruncatedLog("missing run_start".into())),
    };
    let end = match records.last() {
        Some(LogRecord { t, event: Event::RunEnd, .. }) => *t,
        _ => return Err(MetricsError::TruncatedLog("missing run_end".into())),
    };

    let mut tasks: Vec<TaskRecord> = Vec::new();
    let mut task_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut workers: BTreeMap<String, WorkerTrack> = BTreeMap::new();
    let mut waits = Vec::new();
    let mut occupancy = BTreeMap::new();
    let mut active = 0usize;
    let mut series: Vec<(f64, usize)> = Vec::new();
    let mut failures: Vec<FailureDetection> = Vec::new();
    let (mut completions, mut executions, mut cached, mut misfits, mut speculations, mut discarded, mut scale_ups, mut retirements) =
        (0, 0, 0, 0, 0, 0, 0, 0);

    let step_active = |t: f64, active: usize, series: &mut Vec<(f64, usize)>| match series.last_mut() {
        Some(last) if last.0 == t => last.1 = active,
        _ => series.push((t, active)),
    };

    for r in &records[1..records.len() - 1] {
        let t = r.t;
        match &r.event {
            Event::RunStart { .. } | Event::RunEnd => {
                return Err(MetricsError::TruncatedLog(format!("unexpected run boundary at seq {}", r.seq)))
            }
            Event::WorkflowSubmitted { workflow_id, tenant_id, operators } => {
                task_index.insert(workflow_id.clone(), tasks.len());
                tasks.push(TaskRecord {
                    workflow_id: workflow_id.clone(),
                    tenant_id: tenant_id.clone(),
                    operators: *operators,
                    submitted_at: t,
                    finished_at: None,
                    latency_s: None,
                    outcome: "unfinished".into(),
                    executed: 0,
                    cached: 0,
                });
            }
            Event::WorkflowCompleted { workflow_id } | Event::WorkflowFailed { workflow_id, .. } => {
                let i = *task_index
                    .get(workflow_id)
                    .ok_or_else(|| MetricsError::TruncatedLog(format!("{workflow_id} finished before submission")))?;
                let task = &mut tasks[i];
                task.finished_at = Some(t);
                if matches!(r.event, Event::WorkflowCompleted { .. }) {
                    task.latency_s = Some(t - task.submitted_at);
                    task.outcome = "completed".into();
                } else {
                    task.outcome = "failed".into();
                }
            }
            Event::OperatorCompleted { workflow_id, executed_by, .. } => {
                completions += 1;
                let from_cache = executed_by == EXECUTED_BY_CACHE;
                cached += usize::from(from_cache);
                if let Some(i) = task_index.get(workflow_id) {
                    if from_cache {
                        tasks[*i].cached += 1;
                    } else {
                        tasks[*i].executed += 1;
                    }
                }
            }
            Event::Publish { outcome, .. } => {
                executions += 1;
                discarded += usize::from(*outcome == PublishOutcome::DuplicateDiscarded);
            }
            Event::Dispatch { replicas, queue_wait_s, .. } => {
                if *replicas == 0 {
                    waits.extend_from_slice(queue_wait_s);
                }
            }
            Event::ExecStart { worker, size, duration_s, .. } => {
                *occupancy.entry(*size).or_insert(0) += 1;
                if let Some(w) = workers.get_mut(worker) {
                    w.busy += duration_s;
                }
            }
            Event::WorkerProvisioned { worker, class, cost_rate, .. } => {
                workers.insert(worker.clone(), WorkerTrack {
                    class: class.to_string(),
                    cost_rate: *cost_rate,
                    provisioned_at: t,
                    ended_at: None,
                    watts: 0.0,
                    since: t,
                    energy: 0.0,
                    busy: 0.0,
                });
            }
            Event::Power { worker, watts } => {
                if let Some(w) = workers.get_mut(worker) {
                    w.set_power(t, *watts);
                }
            }
            Event::WorkerReady { .. } => {
                active += 1;
                step_active(t, active, &mut series);
            }
            Event::WorkerRetired { worker, .. } | Event::WorkerFailed { worker, .. } => {
                if let Some(w) = workers.get_mut(worker) {
                    w.ended_at.get_or_insert(t);
                }
                active = active.saturating_sub(1);
                step_active(t, active, &mut series);
                if matches!(r.event, Event::WorkerRetired { .. }) {
                    retirements += 1;
                } else if let Some(f) = failures.iter_mut().rev().find(|f| &f.worker == worker && f.detected_at.is_none()) {
                    f.detected_at = Some(t);
                    f.detection_s = Some(t - f.injected_at);
                }
            }
            Event::FailureInjected { worker, kind } => failures.push(FailureDetection {
                worker: worker.clone(),
                kind: kind.clone(),
                injected_at: t,
                detected_at: None,
                detection_s: None,
            }),
            Event::Misfit { .. } => misfits += 1,
            Event::Speculate { .. } => speculations += 1,
            Event::ScaleUp { .. } => scale_ups += 1,
            Event::CacheHit { .. }
            | Event::Admit { .. }
            | Event::Rollback { .. }
            | Event::Load { .. }
            | Event::BatchDone { .. }
            | Event::Heartbeat { .. }
            | Event::InputUnavailable { .. } => {}
        }
    }

    let mut usage = Vec::with_capacity(workers.len());
    for (id, mut w) in workers {
        let stop = w.ended_at.unwrap_or(end);
        w.set_power(stop, 0.0);
        usage.push(WorkerUsage {
            worker: id,
            class: w.class,
            cost_rate: w.cost_rate,
            provisioned_at: w.provisioned_at,
            ended_at: stop,
            cost: w.cost_rate * (stop - w.provisioned_at) / 3600.0,
            energy_j: w.energy,
            busy_s: w.busy,
        });
    }
    let total_cost = usage.iter().map(|u| u.cost).sum();
    let total_energy_j = usage.iter().map(|u| u.energy_j).sum();

    let latencies: Vec<f64> = tasks.iter().filter_map(|t| t.latency_s).collect();
    let n = latencies.len();
    let avg = (n > 0).then(|| latencies.iter().sum::<f64>() / n as f64);
    let throughput = match (tasks.first(), tasks.iter().filter_map(|t| t.latency_s.and(t.finished_at)).reduce(f64::max)) {
        (Some(first), Some(last)) if last > first.submitted_at => Some(n as f64 / ((last - first.submitted_at) / 60.0)),
        _ => None,
    };
    let completed = tasks.iter().filter(|t| t.outcome == "completed").count();
    let failed = tasks.iter().filter(|t| t.outcome == "failed").count();

    Ok(MetricsReport {
        scenario,
        policy,
        seed,
        run_end_s: end,
        workflows_submitted: tasks.len(),
        workflows_completed: completed,
        workflows_failed: failed,
        task_count: n,
        latency: Stats::of(&latencies),
        avg_latency_s: avg,
        latencies_s: latencies,
        throughput_per_min: throughput,
        total_cost,
        total_energy_j,
        cdp: avg.map(|a| cdp(total_cost, n, a)),
        edp: avg.map(|a| edp(total_energy_j, n, a)),
        queueing: Stats::of(&waits),
        operator_completions: completions,
        executions,
        cache_completions: cached,
        dedup_savings: completions as i64 - executions as i64,
        batch_occupancy: occupancy,
        peak_active_workers: series.iter().map(|p| p.1).max().unwrap_or(0),
        active_workers: series,
        failures,
        misfits,
        speculations,
        discarded_duplicates: discarded,
        scale_ups,
        retirements,
        workers: usage,
        tasks,
    })
}
