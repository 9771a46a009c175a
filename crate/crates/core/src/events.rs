//! The shared audit trail: one JSON record per line, ordered by virtual time.

use serde::{Deserialize, Serialize};

use crate::cas::PublishOutcome;
use crate::digest::{ContentHash, ExecSignature, TaskIdentity};
use crate::workflow::ResourceClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    RunStart {
        scenario: String,
        policy: String,
        seed: u64,
    },
    WorkflowSubmitted {
        workflow_id: String,
        tenant_id: String,
        operators: usize,
    },
    WorkflowCompleted {
        workflow_id: String,
    },
    WorkflowFailed {
        workflow_id: String,
        reason: String,
    },
    /// Operators served from an output that was already published.
    CacheHit {
        identity: TaskIdentity,
        consumers: usize,
    },
    OperatorCompleted {
        workflow_id: String,
        operator_id: String,
        executed_by: String,
    },
    Dispatch {
        worker: String,
        batch_id: u64,
        signature: ExecSignature,
        tasks: Vec<u64>,
        replicas: usize,
        utility: f64,
        /// Per task, seconds spent READY before this dispatch.
        queue_wait_s: Vec<f64>,
    },
    Admit {
        worker: String,
        batch_id: u64,
        queue_depth: usize,
        cold: bool,
    },
    /// Admission refused because the worker left the fleet; tasks back to READY.
    Rollback {
        worker: String,
        batch_id: u64,
    },
    Load {
        worker: String,
        batch_id: u64,
        signature: ExecSignature,
        fetch_s: f64,
        load_s: f64,
        evicted: Vec<ExecSignature>,
    },
    ExecStart {
        worker: String,
        batch_id: u64,
        size: usize,
        duration_s: f64,
    },
    BatchDone {
        worker: String,
        batch_id: u64,
        size: usize,
    },
    Publish {
        identity: TaskIdentity,
        output: ContentHash,
        worker: String,
        outcome: PublishOutcome,
    },
    Power {
        worker: String,
        watts: f64,
    },
    Heartbeat {
        worker: String,
        power_w: f64,
        queue_depth: usize,
    },
    WorkerProvisioned {
        worker: String,
        class: ResourceClass,
        cost_rate: f64,
        idle_power_w: f64,
        peak_power_w: f64,
        ready_at: f64,
    },
    WorkerReady {
        worker: String,
    },
    WorkerRetired {
        worker: String,
        idle_since: f64,
    },
    WorkerFailed {
        worker: String,
        last_heartbeat: f64,
        requeued: usize,
    },
    FailureInjected {
        worker: String,
        kind: String,
    },
    Misfit {
        worker: String,
        batch_id: u64,
        shortfall_bytes: u64,
        required_bytes: u64,
    },
    InputUnavailable {
        worker: String,
        batch_id: u64,
        missing: ContentHash,
    },
    Speculate {
        task: u64,
        identity: TaskIdentity,
        primary_worker: String,
        elapsed_s: f64,
        threshold_s: f64,
    },
    ScaleUp {
        signature: ExecSignature,
        class: ResourceClass,
        pending: usize,
        capacity: usize,
    },
    RunEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: f64,
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, thiserror::Error)]
#[error("event log line {line}: {message}")]
pub struct LogParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append an event. Timestamps must never go backwards.
    pub fn record(&mut self, t: f64, event: Event) {
        if let Some(last) = self.records.last() {
            assert!(t >= last.t, "event log clock went backwards: {t} < {}", last.t);
        }
        let seq = self.records.len() as u64;
        self.records.push(LogRecord { t, seq, event });
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LogRecord> {
        self.records.iter()
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 96);
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Vec<LogRecord>, LogParseError> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| LogParseError { line: i + 1, message: e.to_string() })
            })
            .collect()
    }
}
