//! Worker runtime: admission queue, local cache, batch execution, heartbeats.

mod backend;
mod cache;
mod fleet;
pub mod perf;

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cas::{ArtifactKind, CasError, CasStore};
use crate::digest::{ContentHash, ExecSignature, TaskIdentity};
use crate::workflow::{Affinity, OperatorKind, OperatorSpec, ResourceClass, TenantId};

pub use backend::{ExecutionBackend, SimulatedBackend};
pub use cache::{FootprintTooLarge, LocalCache};
pub use fleet::Fleet;
pub use perf::{MemoryModel, PerfEntry, PerfModel, ResourceModel, GIB};

pub type WorkerId = String;
/// Identifier of one schedulable unit of work (a dedup group).
pub type TaskId = u64;

/// Which tenants may place work on a worker.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Visibility {
    #[default]
    Shared,
    Private(TenantId),
}

impl fmt::Display for Visibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Visibility::Shared => f.write_str("shared"),
            Visibility::Private(t) => write!(f, "private:{t}"),
        }
    }
}

impl std::str::FromStr for Visibility {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shared" => Ok(Visibility::Shared),
            _ => s
                .strip_prefix("private:")
                .filter(|t| !t.is_empty())
                .map(|t| Visibility::Private(t.to_string()))
                .ok_or_else(|| format!("invalid visibility `{s}`")),
        }
    }
}

impl Serialize for Visibility {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Visibility {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl Visibility {
    /// Whether an operator of `tenant` with `affinity` may run here.
    pub fn admits(&self, affinity: Affinity, tenant: &str) -> bool {
        match (self, affinity) {
            (Visibility::Shared, Affinity::PrivateOnly) => false,
            (Visibility::Shared, _) => true,
            (Visibility::Private(_), Affinity::SharedOnly) => false,
            (Visibility::Private(owner), _) => owner == tenant,
        }
    }
}

/// Price and power envelope of one hardware class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub class: ResourceClass,
    /// Dollars per hour.
    pub cost_rate: f64,
    pub idle_power_watts: f64,
    pub peak_power_watts: f64,
}

impl ClassProfile {
    /// Approximate marketplace rental prices and board power.
    pub fn reference(class: ResourceClass) -> Self {
        let (cost_rate, idle, peak) = match class {
            ResourceClass::Rtx4090_24g => (0.35, 25.0, 450.0),
            ResourceClass::Rtx4090_48g => (0.55, 30.0, 450.0),
            ResourceClass::H100_94g => (2.20, 70.0, 400.0),
        };
        Self { class, cost_rate, idle_power_watts: idle, peak_power_watts: peak }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerDescriptor {
    pub worker_id: WorkerId,
    pub resource_class: ResourceClass,
    pub vram_bytes: u64,
    pub arch_generation: u32,
    pub cost_rate: f64,
    pub idle_power_watts: f64,
    pub peak_power_watts: f64,
    pub provisioned_at: f64,
    pub tenant_visibility: Visibility,
}

impl WorkerDescriptor {
    pub fn new(worker_id: WorkerId, profile: &ClassProfile, provisioned_at: f64, visibility: Visibility) -> Self {
        Self {
            worker_id,
            resource_class: profile.class,
            vram_bytes: profile.class.vram_bytes(),
            arch_generation: profile.class.arch_generation(),
            cost_rate: profile.cost_rate,
            idle_power_watts: profile.idle_power_watts,
            peak_power_watts: profile.peak_power_watts,
            provisioned_at,
            tenant_visibility: visibility,
        }
    }

    /// Meets an operator's minimum class requirement.
    pub fn satisfies(&self, required: ResourceClass) -> bool {
        self.vram_bytes >= required.vram_bytes() && self.arch_generation >= required.arch_generation()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerStatus {
    Warming,
    Active,
    Draining,
    Retired,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub task: TaskId,
    pub identity: TaskIdentity,
    /// Resolved positional inputs.
    pub inputs: Vec<ContentHash>,
    pub replica: bool,
}

/// A batch handed to a worker by the control plane.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittedBatch {
    pub batch_id: u64,
    pub signature: ExecSignature,
    /// Representative operator; every item shares its kind, model, params and class.
    pub spec: OperatorSpec,
    /// Footprint the control plane planned with (profile, hint or misfit override).
    pub declared_footprint: u64,
    /// Largest batch for this kind; the utilization reference.
    pub max_batch: usize,
    pub items: Vec<BatchItem>,
    pub dispatched_at: f64,
}

impl AdmittedBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorkerError {
    #[error("worker {0} is no longer accepting work")]
    WorkerGone(WorkerId),
    #[error("input {0} unavailable in the artifact store")]
    InputUnavailable(ContentHash),
    #[error("no profile for {kind} `{model}` on {class}")]
    NoProfile { kind: OperatorKind, model: String, class: ResourceClass },
    #[error("resource shortage: {required} bytes required, {shortfall} over capacity")]
    ResourceShortage { shortfall: u64, required: u64 },
    #[error(transparent)]
    Cas(#[from] CasError),
}

/// Timeline of a batch the worker has started.
#[derive(Debug, Clone, PartialEq)]
pub struct StartedBatch {
    pub batch_id: u64,
    pub signature: ExecSignature,
    pub fetch_s: f64,
    pub load_s: f64,
    pub exec_s: f64,
    pub exec_at: f64,
    pub done_at: f64,
    pub evicted: Vec<ExecSignature>,
    /// Memory the batch actually needs; set when it will not fit.
    pub shortage: Option<(u64, u64)>,
    pub size: usize,
}

#[derive(Debug, Clone)]
struct Running {
    batch: AdmittedBatch,
    started: StartedBatch,
    executing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutput {
    pub task: TaskId,
    pub identity: TaskIdentity,
    pub output: ContentHash,
    pub replica: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub batch_id: u64,
    pub outputs: Vec<TaskOutput>,
    pub consumed: Vec<ContentHash>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heartbeat {
    pub worker_id: WorkerId,
    pub at: f64,
    pub power_watts: f64,
    pub queue_depth: usize,
    pub resident: Vec<ExecSignature>,
}

/// Bytes of local disk reserved for weights and input artifacts.
pub const DEFAULT_DISK_BUDGET: u64 = 512 * GIB;

pub struct Worker {
    pub descriptor: WorkerDescriptor,
    status: WorkerStatus,
    hung: bool,
    crashed: bool,
    pub cache: LocalCache,
    queue: VecDeque<AdmittedBatch>,
    running: Option<Running>,
    idle_since: f64,
    power_watts: f64,
    power_since: f64,
    energy_joules: f64,
    ended_at: Option<f64>,
    resources: Arc<ResourceModel>,
    backend: Arc<dyn ExecutionBackend>,
}

impl fmt::Debug for Worker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Worker")
            .field("id", &self.descriptor.worker_id)
            .field("class", &self.descriptor.resource_class)
            .field("status", &self.status)
            .field("queue_depth", &self.queue_depth())
            .finish_non_exhaustive()
    }
}

impl Worker {
    /// A worker that becomes usable after [`Worker::mark_ready`].
    pub fn new(descriptor: WorkerDescriptor, resources: Arc<ResourceModel>, backend: Arc<dyn ExecutionBackend>) -> Self {
        let now = descriptor.provisioned_at;
        Self {
            cache: LocalCache::new(descriptor.vram_bytes, DEFAULT_DISK_BUDGET),
            power_watts: descriptor.idle_power_watts,
            descriptor,
            status: WorkerStatus::Warming,
            hung: false,
            crashed: false,
            queue: VecDeque::new(),
            running: None,
            idle_since: now,
            power_since: now,
            energy_joules: 0.0,
            ended_at: None,
            resources,
            backend,
        }
    }

    pub fn id(&self) -> &str {
        &self.descriptor.worker_id
    }

    pub fn class(&self) -> ResourceClass {
        self.descriptor.resource_class
    }

    pub fn status(&self) -> WorkerStatus {
        self.status
    }

    pub fn mark_ready(&mut self, now: f64) {
        if self.status == WorkerStatus::Warming {
            self.status = WorkerStatus::Active;
            self.idle_since = now;
        }
    }

    /// Still billed and part of the fleet (possibly warming or silently hung).
    pub fn is_alive(&self) -> bool {
        matches!(self.status, WorkerStatus::Warming | WorkerStatus::Active | WorkerStatus::Draining)
    }

    pub fn accepts_work(&self) -> bool {
        self.status == WorkerStatus::Active
    }

    pub fn is_hung(&self) -> bool {
        self.hung
    }

    /// Running plus queued batches.
    pub fn queue_depth(&self) -> usize {
        self.queue.len() + usize::from(self.running.is_some())
    }

    pub fn is_busy(&self) -> bool {
        self.running.is_some()
    }

    pub fn is_idle(&self) -> bool {
        self.status == WorkerStatus::Active && self.queue_depth() == 0
    }

    pub fn idle_since(&self) -> f64 {
        self.idle_since
    }

    pub fn power_watts(&self) -> f64 {
        self.power_watts
    }

    /// Tasks admitted here, running or queued.
    pub fn admitted_tasks(&self) -> impl Iterator<Item = &BatchItem> {
        self.running
            .iter()
            .map(|r| &r.batch)
            .chain(self.queue.iter())
            .flat_map(|b| b.items.iter())
    }

    pub fn is_executing(&self) -> bool {
        self.running.as_ref().is_some_and(|r| r.executing)
    }

    pub fn running_batch(&self) -> Option<&AdmittedBatch> {
        self.running.as_ref().map(|r| &r.batch)
    }

    pub fn admit(&mut self, batch: AdmittedBatch) -> Result<usize, WorkerError> {
        if !self.accepts_work() {
            return Err(WorkerError::WorkerGone(self.descriptor.worker_id.clone()));
        }
        self.queue.push_back(batch);
        Ok(self.queue_depth())
    }

    fn set_power(&mut self, now: f64, watts: f64) {
        self.energy_joules += self.power_watts * (now - self.power_since).max(0.0);
        self.power_watts = watts;
        self.power_since = now;
    }

    /// Energy consumed up to `now`.
    pub fn energy_joules(&self, now: f64) -> f64 {
        let end = self.ended_at.map_or(now, |e| e.min(now));
        self.energy_joules + self.power_watts * (end - self.power_since).max(0.0)
    }

    /// Dollars accrued from provisioning to `now` or to removal.
    pub fn cost(&self, now: f64) -> f64 {
        let end = self.ended_at.map_or(now, |e| e.min(now));
        self.descriptor.cost_rate * (end - self.descriptor.provisioned_at).max(0.0) / 3600.0
    }

    fn profile(&self, spec: &OperatorSpec) -> Result<PerfEntry, WorkerError> {
        self.resources
            .perf
            .get(spec.op_kind, &spec.model_ref, self.class())
            .cloned()
            .ok_or_else(|| WorkerError::NoProfile {
                kind: spec.op_kind,
                model: spec.model_ref.clone(),
                class: self.class(),
            })
    }

    /// Begin the next queued batch: fetch what is missing, load the
    /// signature, and plan execution. The batch is returned with the error
    /// if its inputs cannot be resolved.
    pub fn start_next(&mut self, now: f64, cas: &CasStore) -> Option<Result<StartedBatch, (AdmittedBatch, WorkerError)>> {
        if self.running.is_some() || self.hung || !self.is_alive() {
            return None;
        }
        let batch = self.queue.pop_front()?;
        let entry = match self.profile(&batch.spec) {
            Ok(e) => e,
            Err(e) => return Some(Err((batch, e))),
        };
        let missing = batch.items.iter().flat_map(|i| i.inputs.iter()).find(|h| !cas.has(h)).copied();
        if let Some(h) = missing {
            return Some(Err((batch, WorkerError::InputUnavailable(h))));
        }
        let mut fetch_bytes = 0u64;
        for item in &batch.items {
            for h in &item.inputs {
                if !self.cache.has_artifact(h) {
                    let size = cas.size_of(h).unwrap_or(0);
                    fetch_bytes += size;
                    self.cache.insert_artifact(*h, size);
                }
            }
        }
        let weights = batch.spec.model_hash();
        let resident = self.cache.is_resident(&batch.signature);
        if !resident && !self.cache.has_artifact(&weights) {
            fetch_bytes += entry.mem_footprint_bytes;
            self.cache.insert_artifact(weights, entry.mem_footprint_bytes);
        }
        let fetch_s = self.resources.fetch_seconds(fetch_bytes);
        let n = batch.len();
        let activation = self.resources.memory.activation(batch.spec.op_kind) * n as u64;
        let load_s = if resident { 0.0 } else { entry.load_time_s };
        let footprint = batch.declared_footprint.min(self.descriptor.vram_bytes);
        let evicted = self.cache.load(batch.signature, footprint, activation).unwrap_or_default();
        let required = entry.mem_footprint_bytes + activation;
        let shortage = (required > self.descriptor.vram_bytes)
            .then(|| (required - self.descriptor.vram_bytes, required));
        let exec_s = self.backend.execution_time(&entry, n);
        let exec_at = now + fetch_s + load_s;
        let started = StartedBatch {
            batch_id: batch.batch_id,
            signature: batch.signature,
            fetch_s,
            load_s,
            exec_s,
            exec_at,
            done_at: exec_at + exec_s,
            evicted,
            shortage,
            size: n,
        };
        self.running = Some(Running { batch, started: started.clone(), executing: false });
        Some(Ok(started))
    }

    /// Enter the compute phase. Fails with the batch if it does not fit in memory.
    pub fn begin_exec(&mut self, now: f64) -> Result<f64, (AdmittedBatch, WorkerError)> {
        let shortage = self.running.as_ref().expect("begin_exec without a running batch").started.shortage;
        if let Some((shortfall, required)) = shortage {
            let running = self.running.take().expect("checked");
            self.cache.unload(&running.batch.signature);
            self.settle_idle(now);
            return Err((running.batch, WorkerError::ResourceShortage { shortfall, required }));
        }
        let running = self.running.as_ref().expect("checked");
        let n = running.batch.len();
        let max = running.batch.max_batch.max(n);
        let entry = self.profile(&running.batch.spec).expect("profiled at start");
        self.running.as_mut().expect("checked").executing = true;
        let u = (entry.throughput(n) / entry.throughput(max)).clamp(0.0, 1.0);
        let d = &self.descriptor;
        let watts = d.idle_power_watts + (d.peak_power_watts - d.idle_power_watts) * u;
        self.set_power(now, watts);
        Ok(watts)
    }

    /// Finish the running batch: store each output in the CAS.
    pub fn finish(&mut self, now: f64, cas: &CasStore) -> Result<BatchResult, WorkerError> {
        let running = self.running.take().expect("finish without a running batch");
        let mut outputs = Vec::with_capacity(running.batch.len());
        let mut consumed = Vec::new();
        let kind = artifact_kind(running.batch.spec.op_kind);
        for item in &running.batch.items {
            let bytes = self.backend.produce_output(&running.batch.spec, &item.identity);
            let output = cas.put_artifact(&bytes, kind)?;
            consumed.extend_from_slice(&item.inputs);
            outputs.push(TaskOutput { task: item.task, identity: item.identity, output, replica: item.replica });
        }
        self.settle_idle(now);
        Ok(BatchResult { batch_id: running.batch.batch_id, outputs, consumed })
    }

    fn settle_idle(&mut self, now: f64) {
        let idle = self.descriptor.idle_power_watts;
        self.set_power(now, idle);
        if self.queue.is_empty() {
            self.idle_since = now;
            if self.status == WorkerStatus::Draining {
                self.retire(now);
            }
        }
    }

    /// Run one batch start to finish, ignoring virtual time. Convenience for
    /// callers that do not drive an event loop.
    pub fn execute_batch(&mut self, batch: AdmittedBatch, now: f64, cas: &CasStore) -> Result<(StartedBatch, BatchResult), WorkerError> {
        self.admit(batch)?;
        let started = self.start_next(now, cas).expect("batch queued").map_err(|(_, e)| e)?;
        self.begin_exec(started.exec_at).map_err(|(_, e)| e)?;
        let result = self.finish(started.done_at, cas)?;
        Ok((started, result))
    }

    pub fn heartbeat(&self, now: f64) -> Option<Heartbeat> {
        (self.is_alive() && !self.crashed).then(|| Heartbeat {
            worker_id: self.descriptor.worker_id.clone(),
            at: now,
            power_watts: self.power_watts,
            queue_depth: self.queue_depth(),
            resident: self.cache.resident_signatures().copied().collect(),
        })
    }

    /// Stop accepting work; retire once idle.
    pub fn drain(&mut self, now: f64) {
        if self.status == WorkerStatus::Active {
            self.status = WorkerStatus::Draining;
            if self.queue_depth() == 0 {
                self.retire(now);
            }
        }
    }

    pub fn retire(&mut self, now: f64) {
        self.set_power(now, 0.0);
        self.status = WorkerStatus::Retired;
        self.ended_at = Some(now);
    }

    /// Fail-stop: the worker vanishes; power drops immediately.
    pub fn crash(&mut self, now: f64) {
        self.set_power(now, 0.0);
        self.hung = true;
        self.crashed = true;
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed
    }

    /// Keeps heartbeating and drawing power but never makes progress.
    pub fn hang(&mut self) {
        self.hung = true;
    }

    /// Removed from the fleet by failure detection; returns every batch it held.
    pub fn remove_failed(&mut self, now: f64) -> Vec<AdmittedBatch> {
        self.set_power(now, 0.0);
        self.status = WorkerStatus::Failed;
        self.ended_at = Some(now);
        self.running.take().map(|r| r.batch).into_iter().chain(self.queue.drain(..)).collect()
    }
}

fn artifact_kind(kind: OperatorKind) -> ArtifactKind {
    match kind {
        OperatorKind::Inference => ArtifactKind::Rollout,
        OperatorKind::Eval => ArtifactKind::EvalTrace,
        OperatorKind::DataPrep => ArtifactKind::DatasetShard,
        OperatorKind::ToolCall => ArtifactKind::Generic,
        OperatorKind::Sft | OperatorKind::Dpo | OperatorKind::Ppo => ArtifactKind::Adapter,
    }
}

#[cfg(test)]
mod tests;
