//! Global coordinator: pools ready operators across workflows, deduplicates
//! by task identity, batches by execution signature, places batches on
//! workers, and recovers from failures.
//!
//! All methods are called from one event loop; nothing here is shared
//! across threads.

mod autoscale;
mod config;
mod scheduler;
mod utility;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use serde::Serialize;

use crate::cas::{CasError, CasStore, LineageEdge, PublishOutcome, EXECUTED_BY_CACHE};
use crate::digest::{ContentHash, ExecSignature, TaskIdentity};
use crate::events::{Event, EventLog};
use crate::worker::{AdmittedBatch, BatchResult, Fleet, Heartbeat, ResourceModel, TaskId, Visibility, WorkerDescriptor, WorkerId, WorkerStatus};
use crate::workflow::{Affinity, InputRef, OpId, OperatorSpec, ResourceClass, TenantId, WorkflowDag, WorkflowError, WorkflowId};

pub use autoscale::ScaleDelta;
pub use config::{Ablation, AutoscaleConfig, ControlConfig, Policy, PoolEntry, UtilityWeights};
pub use utility::{locality_gain, p95, prefix_sizes, select_best, Candidate, OrderKey, UtilityTerms};

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("workflow `{0}` already submitted")]
    DuplicateWorkflowId(WorkflowId),
    #[error("unknown worker `{0}`")]
    UnknownWorker(WorkerId),
    #[error("unknown operator task {0}")]
    UnknownOperator(TaskId),
    #[error("infeasible pair: {0}")]
    InfeasiblePair(String),
    #[error("no worker class can run signature {signature} needing {required_bytes} bytes")]
    NoCapableWorker { signature: ExecSignature, required_bytes: u64 },
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Cas(#[from] CasError),
}

/// Lifecycle of one operator of one workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorState {
    /// Some upstream producer has not completed yet.
    Blocked,
    Ready,
    Running,
    Completed,
    /// Its workflow failed before it completed.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorStatus {
    pub state: OperatorState,
    pub assigned_worker: Option<WorkerId>,
    pub attempt_count: u32,
    pub became_ready_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Consumer {
    pub workflow_id: WorkflowId,
    pub op_id: OpId,
    pub tenant_id: TenantId,
    pub affinity: Affinity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Runner {
    pub worker: WorkerId,
    pub batch_id: u64,
    pub dispatched_at: f64,
    pub replica: bool,
    /// Predicted fetch + load + execution time at dispatch.
    pub predicted_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupState {
    Ready,
    Running,
    Completed,
    /// Every consumer's workflow failed.
    Abandoned,
}

/// All operators awaiting the output of one task identity. Executed once,
/// fanned out to every consumer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DedupGroup {
    pub id: TaskId,
    pub identity: TaskIdentity,
    pub signature: ExecSignature,
    pub spec: OperatorSpec,
    pub inputs: Vec<ContentHash>,
    pub consumers: Vec<Consumer>,
    /// The operator that created the group; keeps lineage attributable even if its workflow fails.
    pub origin: (WorkflowId, OpId),
    pub order_key: OrderKey,
    pub state: GroupState,
    pub ready_since: f64,
    pub runners: Vec<Runner>,
    pub attempts: u32,
    pub replicated: bool,
}

impl DedupGroup {
    /// Whether a worker of this visibility may run the work of every consumer.
    pub fn admitted_by(&self, vis: &Visibility) -> bool {
        self.consumers.iter().all(|c| vis.admits(c.affinity, &c.tenant_id))
    }
}

/// A committed (worker, batch) choice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleDecision {
    pub worker_id: WorkerId,
    pub batch_id: u64,
    pub batch: Vec<TaskId>,
    pub signature: ExecSignature,
    pub utility: f64,
    pub decided_at: f64,
    pub replica: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum WorkflowOutcome {
    Completed { at: f64 },
    Failed { at: f64, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Slot {
    Blocked,
    Group(TaskId),
    Completed,
    Failed,
}

#[derive(Debug, Clone)]
struct WorkflowState {
    dag: WorkflowDag,
    seq: u64,
    slots: BTreeMap<OpId, Slot>,
    outputs: BTreeMap<OpId, ContentHash>,
    remaining: usize,
    outcome: Option<WorkflowOutcome>,
    /// Worker holding the whole workflow (monolithic baseline only).
    pinned: Option<WorkerId>,
}

pub struct ControlPlane {
    config: ControlConfig,
    resources: Arc<ResourceModel>,
    cas: Arc<CasStore>,
    workflows: BTreeMap<WorkflowId, WorkflowState>,
    groups: BTreeMap<TaskId, DedupGroup>,
    active: HashMap<TaskIdentity, Vec<TaskId>>,
    pool: BTreeMap<ExecSignature, BTreeSet<(OrderKey, TaskId)>>,
    last_heartbeat: BTreeMap<WorkerId, f64>,
    samples: HashMap<ExecSignature, Vec<f64>>,
    overrides: HashMap<ExecSignature, u64>,
    launches: HashMap<TaskIdentity, u32>,
    next_task: TaskId,
    next_batch: u64,
    next_seq: u64,
    rr_cursor: usize,
    worklist: VecDeque<(WorkflowId, OpId)>,
}

impl std::fmt::Debug for ControlPlane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlPlane")
            .field("policy", &self.config.policy)
            .field("workflows", &self.workflows.len())
            .field("groups", &self.groups.len())
            .finish_non_exhaustive()
    }
}

fn cache_edge(c: &Consumer, identity: TaskIdentity, inputs: &[ContentHash], output: ContentHash, at: f64) -> LineageEdge {
    LineageEdge {
        workflow_id: c.workflow_id.clone(),
        operator_id: c.op_id.clone(),
        task_identity: identity,
        consumed: inputs.to_vec(),
        produced: output,
        executed_by: EXECUTED_BY_CACHE.to_string(),
        completed_at: at,
    }
}

impl ControlPlane {
    pub fn new(config: ControlConfig, resources: Arc<ResourceModel>, cas: Arc<CasStore>) -> Self {
        Self {
            config,
            resources,
            cas,
            workflows: BTreeMap::new(),
            groups: BTreeMap::new(),
            active: HashMap::new(),
            pool: BTreeMap::new(),
            last_heartbeat: BTreeMap::new(),
            samples: HashMap::new(),
            overrides: HashMap::new(),
            launches: HashMap::new(),
            next_task: 0,
            next_batch: 0,
            next_seq: 0,
            rr_cursor: 0,
            worklist: VecDeque::new(),
        }
    }

    pub fn config(&self) -> &ControlConfig {
        &self.config
    }

    pub fn cas(&self) -> &Arc<CasStore> {
        &self.cas
    }

    pub fn resources(&self) -> &Arc<ResourceModel> {
        &self.resources
    }

    // ----- queries -----

    pub fn groups(&self) -> impl Iterator<Item = &DedupGroup> {
        self.groups.values()
    }

    pub fn group(&self, id: TaskId) -> Option<&DedupGroup> {
        self.groups.get(&id)
    }

    /// Ready groups per signature, FCFS.
    pub fn ready_pool(&self) -> BTreeMap<ExecSignature, Vec<TaskId>> {
        self.pool
            .iter()
            .filter(|(_, s)| !s.is_empty())
            .map(|(sig, s)| (*sig, s.iter().map(|(_, t)| *t).collect()))
            .collect()
    }

    /// Number of ready operator instances (consumers), counting each group member.
    pub fn ready_consumers(&self) -> usize {
        self.pool.values().flatten().map(|(_, t)| self.groups[t].consumers.len()).sum()
    }

    pub fn pending_groups(&self) -> usize {
        self.pool.values().map(BTreeSet::len).sum()
    }

    pub fn workflow_outcome(&self, id: &str) -> Option<&WorkflowOutcome> {
        self.workflows.get(id).and_then(|w| w.outcome.as_ref())
    }

    pub fn workflow_ids(&self) -> impl Iterator<Item = &WorkflowId> {
        self.workflows.keys()
    }

    pub fn all_terminal(&self) -> bool {
        self.workflows.values().all(|w| w.outcome.is_some())
    }

    pub fn unfinished(&self) -> Vec<WorkflowId> {
        self.workflows.iter().filter(|(_, w)| w.outcome.is_none()).map(|(k, _)| k.clone()).collect()
    }

    /// Non-cache executions launched per identity (primaries plus replicas).
    pub fn launches(&self, identity: &TaskIdentity) -> u32 {
        self.launches.get(identity).copied().unwrap_or(0)
    }

    pub fn misfit_override(&self, sig: &ExecSignature) -> Option<u64> {
        self.overrides.get(sig).copied()
    }

    pub fn last_heartbeat(&self, worker: &str) -> Option<f64> {
        self.last_heartbeat.get(worker).copied()
    }

    pub fn operator_status(&self, workflow: &str, op: &str) -> Option<OperatorStatus> {
        let wf = self.workflows.get(workflow)?;
        let slot = wf.slots.get(op)?;
        Some(match slot {
            Slot::Blocked => OperatorStatus { state: OperatorState::Blocked, assigned_worker: None, attempt_count: 0, became_ready_at: None },
            Slot::Completed => OperatorStatus { state: OperatorState::Completed, assigned_worker: None, attempt_count: 0, became_ready_at: None },
            Slot::Failed => OperatorStatus { state: OperatorState::Failed, assigned_worker: None, attempt_count: 0, became_ready_at: None },
            Slot::Group(g) => {
                let g = &self.groups[g];
                let state = match g.state {
                    GroupState::Ready => OperatorState::Ready,
                    GroupState::Running => OperatorState::Running,
                    GroupState::Completed => OperatorState::Completed,
                    GroupState::Abandoned => OperatorState::Failed,
                };
                OperatorStatus {
                    state,
                    assigned_worker: g.runners.iter().find(|r| !r.replica).or(g.runners.first()).map(|r| r.worker.clone()),
                    attempt_count: g.attempts,
                    became_ready_at: Some(g.ready_since),
                }
            }
        })
    }

    // ----- feasibility -----

    /// Peak memory a batch of `n` needs on `class`: the weight estimate (author
    /// hint, else profile) plus activations, raised to any misfit override.
    pub fn memory_requirement(&self, spec: &OperatorSpec, sig: &ExecSignature, n: usize, class: ResourceClass) -> Option<u64> {
        let profile = self.resources.perf.get(spec.op_kind, &spec.model_ref, class)?;
        let weights = spec.memory_hint_bytes().unwrap_or(profile.mem_footprint_bytes);
        let need = weights + n as u64 * self.resources.memory.activation(spec.op_kind);
        Some(need.max(self.overrides.get(sig).copied().unwrap_or(0)))
    }

    /// Hard constraints: memory, hardware class, tenant placement.
    pub fn feasible(&self, worker: &WorkerDescriptor, tasks: &[TaskId]) -> bool {
        let Some(first) = tasks.first().and_then(|t| self.groups.get(t)) else {
            return false;
        };
        if !worker.satisfies(first.spec.resource_class) {
            return false;
        }
        let Some(need) = self.memory_requirement(&first.spec, &first.signature, tasks.len(), worker.resource_class) else {
            return false;
        };
        need <= worker.vram_bytes
            && tasks.iter().all(|t| {
                self.groups.get(t).is_some_and(|g| g.signature == first.signature && g.admitted_by(&worker.tenant_visibility))
            })
    }

    /// Classes that exist now or may be provisioned.
    fn reachable_classes(&self, fleet: &Fleet) -> Vec<(ResourceClass, Visibility)> {
        let mut out: Vec<(ResourceClass, Visibility)> = fleet
            .alive()
            .map(|w| (w.class(), w.descriptor.tenant_visibility.clone()))
            .collect();
        if self.config.elastic() {
            out.extend(self.config.pool.iter().map(|p| (p.profile.class, p.visibility.clone())));
        }
        out.sort();
        out.dedup();
        out
    }

    fn capable(&self, fleet: &Fleet, g: &DedupGroup) -> bool {
        self.reachable_classes(fleet).iter().any(|(class, vis)| {
            let probe = WorkerDescriptor::new(String::new(), &crate::worker::ClassProfile::reference(*class), 0.0, vis.clone());
            probe.satisfies(g.spec.resource_class)
                && g.admitted_by(vis)
                && self
                    .memory_requirement(&g.spec, &g.signature, 1, *class)
                    .is_some_and(|m| m <= class.vram_bytes())
        })
    }

    /// Utility terms for running `tasks` on `worker`, normalized against the fleet.
    pub fn utility_terms(&self, fleet: &Fleet, worker: &WorkerId, tasks: &[TaskId]) -> Result<UtilityTerms, ControlError> {
        let w = fleet.get(worker).ok_or_else(|| ControlError::UnknownWorker(worker.clone()))?;
        if !self.feasible(&w.descriptor, tasks) {
            return Err(ControlError::InfeasiblePair(format!("{worker} cannot run tasks {tasks:?}")));
        }
        let g = &self.groups[&tasks[0]];
        let spec = &g.spec;
        let n = tasks.len();
        let schedulable = || fleet.alive().filter(|x| x.accepts_work());
        let t_max = schedulable()
            .filter(|x| x.descriptor.satisfies(spec.resource_class))
            .filter_map(|x| self.resources.perf.get(spec.op_kind, &spec.model_ref, x.class()))
            .map(|e| e.throughput(n))
            .fold(0.0, f64::max);
        let own = self.resources.perf.get(spec.op_kind, &spec.model_ref, w.class()).expect("feasible implies profile");
        let c_max = schedulable().map(|x| x.descriptor.cost_rate).fold(0.0, f64::max);
        let mut inputs: Vec<ContentHash> = tasks.iter().flat_map(|t| self.groups[t].inputs.iter().copied()).collect();
        inputs.sort();
        inputs.dedup();
        let cached = if inputs.is_empty() {
            0.0
        } else {
            inputs.iter().filter(|h| w.cache.has_artifact(h)).count() as f64 / inputs.len() as f64
        };
        Ok(UtilityTerms {
            t_eff: if t_max > 0.0 { own.throughput(n) / t_max } else { 0.0 },
            cost: if c_max > 0.0 { w.descriptor.cost_rate / c_max } else { 0.0 },
            locality: locality_gain(w.cache.is_resident(&g.signature), cached, w.cache.has_artifact(&spec.model_hash())),
        })
    }

    /// Eq. 1 utility of a feasible (worker, batch) pair.
    pub fn estimate_utility(&self, fleet: &Fleet, worker: &WorkerId, tasks: &[TaskId], weights: &UtilityWeights) -> Result<f64, ControlError> {
        Ok(self.utility_terms(fleet, worker, tasks)?.score(weights))
    }

    // ----- submission and readiness -----

    pub fn register_worker(&mut self, worker: &str, now: f64) {
        self.last_heartbeat.insert(worker.to_string(), now);
    }

    pub fn submit_workflow(&mut self, dag: WorkflowDag, now: f64, fleet: &Fleet, log: &mut EventLog) -> Result<WorkflowId, ControlError> {
        if self.workflows.contains_key(&dag.workflow_id) {
            return Err(ControlError::DuplicateWorkflowId(dag.workflow_id.clone()));
        }
        let id = dag.workflow_id.clone();
        let seq = self.next_seq;
        self.next_seq += 1;
        log.record(now, Event::WorkflowSubmitted { workflow_id: id.clone(), tenant_id: dag.tenant_id.clone(), operators: dag.node_count() });
        let sources = dag.sources();
        let state = WorkflowState {
            slots: dag.nodes.keys().map(|k| (k.clone(), Slot::Blocked)).collect(),
            outputs: BTreeMap::new(),
            remaining: dag.node_count(),
            outcome: None,
            pinned: None,
            seq,
            dag,
        };
        self.workflows.insert(id.clone(), state);
        self.worklist.extend(sources.into_iter().map(|op| (id.clone(), op)));
        self.drain_worklist(now, fleet, log);
        Ok(id)
    }

    fn drain_worklist(&mut self, now: f64, fleet: &Fleet, log: &mut EventLog) {
        while let Some((wf, op)) = self.worklist.pop_front() {
            self.make_ready(&wf, &op, now, fleet, log);
        }
    }

    fn make_ready(&mut self, wf_id: &str, op: &str, now: f64, fleet: &Fleet, log: &mut EventLog) {
        let Some(wf) = self.workflows.get(wf_id) else { return };
        if wf.outcome.is_some() || wf.slots.get(op) != Some(&Slot::Blocked) {
            return;
        }
        let spec = wf.dag.nodes[op].clone();
        let inputs: Vec<ContentHash> = spec
            .inputs
            .iter()
            .map(|i| match i {
                InputRef::External(h) => *h,
                InputRef::Upstream(p) => wf.outputs[p],
            })
            .collect();
        let (identity, signature) = match (spec.task_identity(&inputs), spec.exec_signature()) {
            (Ok(i), Ok(s)) => (i, s),
            (Err(e), _) | (_, Err(e)) => return self.fail_workflow(wf_id, &e.to_string(), now, log),
        };
        let order_key: OrderKey = (wf.seq, op.to_string());
        let consumer = Consumer {
            workflow_id: wf_id.to_string(),
            op_id: op.to_string(),
            tenant_id: spec.tenant_id.clone(),
            affinity: spec.affinity,
        };

        if self.config.dedup() {
            if let Some(out) = self.cas.lookup_output(&identity) {
                log.record(now, Event::CacheHit { identity, consumers: 1 });
                let edge = cache_edge(&consumer, identity, &inputs, out, now);
                if let Err(e) = self.cas.record_edge(edge) {
                    return self.fail_workflow(wf_id, &e.to_string(), now, log);
                }
                self.complete_consumer(&consumer, out, EXECUTED_BY_CACHE, now, log);
                return;
            }
            let joinable = self.active.get(&identity).and_then(|ids| {
                ids.iter().copied().find(|g| {
                    let mut trial = self.groups[g].clone();
                    trial.consumers.push(consumer.clone());
                    self.capable(fleet, &trial)
                })
            });
            if let Some(gid) = joinable {
                let g = self.groups.get_mut(&gid).expect("active group");
                g.consumers.push(consumer);
                if order_key < g.order_key {
                    let old = std::mem::replace(&mut g.order_key, order_key.clone());
                    if g.state == GroupState::Ready {
                        let set = self.pool.get_mut(&signature).expect("ready group pooled");
                        set.remove(&(old, gid));
                        set.insert((order_key, gid));
                    }
                }
                self.workflows.get_mut(wf_id).expect("exists").slots.insert(op.to_string(), Slot::Group(gid));
                return;
            }
        }

        let gid = self.next_task;
        self.next_task += 1;
        let group = DedupGroup {
            id: gid,
            identity,
            signature,
            spec,
            inputs,
            consumers: vec![consumer],
            origin: (wf_id.to_string(), op.to_string()),
            order_key: order_key.clone(),
            state: GroupState::Ready,
            ready_since: now,
            runners: Vec::new(),
            attempts: 0,
            replicated: false,
        };
        if !self.capable(fleet, &group) {
            let required = self.memory_requirement(&group.spec, &signature, 1, ResourceClass::H100_94g).unwrap_or(0);
            let reason = ControlError::NoCapableWorker { signature, required_bytes: required }.to_string();
            return self.fail_workflow(wf_id, &reason, now, log);
        }
        self.groups.insert(gid, group);
        self.active.entry(identity).or_default().push(gid);
        self.pool.entry(signature).or_default().insert((order_key, gid));
        self.workflows.get_mut(wf_id).expect("exists").slots.insert(op.to_string(), Slot::Group(gid));
    }

    fn complete_consumer(&mut self, c: &Consumer, output: ContentHash, executed_by: &str, now: f64, log: &mut EventLog) {
        let Some(wf) = self.workflows.get_mut(&c.workflow_id) else { return };
        if wf.outcome.is_some() {
            return;
        }
        wf.slots.insert(c.op_id.clone(), Slot::Completed);
        wf.outputs.insert(c.op_id.clone(), output);
        wf.remaining -= 1;
        log.record(now, Event::OperatorCompleted {
            workflow_id: c.workflow_id.clone(),
            operator_id: c.op_id.clone(),
            executed_by: executed_by.to_string(),
        });
        if wf.remaining == 0 {
            wf.outcome = Some(WorkflowOutcome::Completed { at: now });
            wf.pinned = None;
            log.record(now, Event::WorkflowCompleted { workflow_id: c.workflow_id.clone() });
            return;
        }
        let mut next: Vec<OpId> = wf.dag.successors(&c.op_id).cloned().collect();
        next.sort();
        next.dedup();
        for succ in next {
            let ready = wf.slots.get(&succ) == Some(&Slot::Blocked)
                && wf.dag.predecessors(&succ).all(|p| wf.slots.get(p) == Some(&Slot::Completed));
            if ready {
                self.worklist.push_back((c.workflow_id.clone(), succ));
            }
        }
    }

    /// Mark a workflow failed and detach its operators from their groups.
    pub fn fail_workflow(&mut self, wf_id: &str, reason: &str, now: f64, log: &mut EventLog) {
        let Some(wf) = self.workflows.get_mut(wf_id) else { return };
        if wf.outcome.is_some() {
            return;
        }
        wf.outcome = Some(WorkflowOutcome::Failed { at: now, reason: reason.to_string() });
        wf.pinned = None;
        log.record(now, Event::WorkflowFailed { workflow_id: wf_id.to_string(), reason: reason.to_string() });
        let mut detached = Vec::new();
        for slot in wf.slots.values_mut() {
            if let Slot::Group(g) = slot {
                detached.push(*g);
            }
            if *slot != Slot::Completed {
                *slot = Slot::Failed;
            }
        }
        for gid in detached {
            let g = self.groups.get_mut(&gid).expect("slot group exists");
            g.consumers.retain(|c| c.workflow_id != wf_id);
            if g.consumers.is_empty() {
                match g.state {
                    GroupState::Ready => {
                        let key = (g.order_key.clone(), gid);
                        let sig = g.signature;
                        g.state = GroupState::Abandoned;
                        self.pool.get_mut(&sig).map(|s| s.remove(&key));
                        self.deactivate(gid);
                    }
                    // Left running; its output is still published when it lands.
                    GroupState::Running => {}
                    GroupState::Completed | GroupState::Abandoned => {}
                }
            }
        }
    }

    fn deactivate(&mut self, gid: TaskId) {
        let identity = self.groups[&gid].identity;
        if let Some(ids) = self.active.get_mut(&identity) {
            ids.retain(|g| *g != gid);
            if ids.is_empty() {
                self.active.remove(&identity);
            }
        }
    }

    fn requeue(&mut self, gid: TaskId, now: f64) {
        let g = self.groups.get_mut(&gid).expect("requeue of known group");
        g.runners.clear();
        g.replicated = false;
        g.attempts += 1;
        if g.consumers.is_empty() {
            g.state = GroupState::Abandoned;
            self.deactivate(gid);
            return;
        }
        g.state = GroupState::Ready;
        g.ready_since = now;
        let key = (g.order_key.clone(), gid);
        self.pool.entry(g.signature).or_default().insert(key);
    }

    // ----- dispatch -----

    /// Predicted seconds until a batch of `n` finishes on `worker`, if started now.
    fn predict(&self, fleet: &Fleet, worker: &str, g: &DedupGroup, n: usize) -> f64 {
        let Some(w) = fleet.get(worker) else { return 0.0 };
        let Some(e) = self.resources.perf.get(g.spec.op_kind, &g.spec.model_ref, w.class()) else { return 0.0 };
        let resident = w.cache.is_resident(&g.signature);
        let fetch = if resident || w.cache.has_artifact(&g.spec.model_hash()) {
            0.0
        } else {
            self.resources.fetch_seconds(e.mem_footprint_bytes)
        };
        fetch + if resident { 0.0 } else { e.load_time_s } + e.duration(n)
    }

    /// Commit a decision: members leave the ready pool and the batch is admitted.
    fn dispatch(&mut self, fleet: &mut Fleet, worker: &WorkerId, tasks: Vec<TaskId>, utility: f64, replica: bool, now: f64, log: &mut EventLog) -> Option<ScheduleDecision> {
        {
            let w = fleet.get(worker).expect("dispatch to known worker");
            assert!(self.feasible(&w.descriptor, &tasks), "committed an infeasible decision");
        }
        let batch_id = self.next_batch;
        self.next_batch += 1;
        let first = &self.groups[&tasks[0]];
        let signature = first.signature;
        let spec = first.spec.clone();
        let declared = spec
            .memory_hint_bytes()
            .or_else(|| {
                let class = fleet.get(worker).expect("known").class();
                self.resources.perf.get(spec.op_kind, &spec.model_ref, class).map(|e| e.mem_footprint_bytes)
            })
            .unwrap_or(0);
        let predicted = self.predict(fleet, worker, first, tasks.len());
        let mut items = Vec::with_capacity(tasks.len());
        let mut waits = Vec::with_capacity(tasks.len());
        for t in &tasks {
            let g = self.groups.get_mut(t).expect("task exists");
            if !replica {
                let key = (g.order_key.clone(), *t);
                self.pool.get_mut(&g.signature).expect("pooled").remove(&key);
                g.state = GroupState::Running;
                waits.push(now - g.ready_since);
            } else {
                g.replicated = true;
                waits.push(0.0);
            }
            g.runners.push(Runner { worker: worker.clone(), batch_id, dispatched_at: now, replica, predicted_s: predicted });
            *self.launches.entry(g.identity).or_default() += 1;
            items.push(crate::worker::BatchItem { task: *t, identity: g.identity, inputs: g.inputs.clone(), replica });
        }
        let batch = AdmittedBatch {
            batch_id,
            signature,
            declared_footprint: declared,
            max_batch: self.config.max_batch_for(spec.op_kind),
            items,
            dispatched_at: now,
            spec,
        };
        log.record(now, Event::Dispatch {
            worker: worker.clone(),
            batch_id,
            signature,
            tasks: tasks.clone(),
            replicas: usize::from(replica) * tasks.len(),
            utility,
            queue_wait_s: waits,
        });
        let w = fleet.get_mut(worker).expect("known");
        let cold = !w.cache.is_resident(&signature);
        match w.admit(batch) {
            Ok(depth) => {
                log.record(now, Event::Admit { worker: worker.clone(), batch_id, queue_depth: depth, cold });
                Some(ScheduleDecision { worker_id: worker.clone(), batch_id, batch: tasks, signature, utility, decided_at: now, replica })
            }
            Err(_) => {
                log.record(now, Event::Rollback { worker: worker.clone(), batch_id });
                for t in &tasks {
                    let g = self.groups.get_mut(t).expect("task exists");
                    g.runners.retain(|r| r.batch_id != batch_id);
                    *self.launches.get_mut(&g.identity).expect("counted") -= 1;
                    if !replica && g.runners.is_empty() {
                        g.attempts = g.attempts.saturating_sub(1);
                        self.requeue(*t, now);
                    }
                }
                None
            }
        }
    }

    /// Whether the control plane may place new work on this worker.
    fn has_room(&self, fleet: &Fleet, worker: &str, bounded: bool) -> bool {
        fleet.get(worker).is_some_and(|w| {
            w.accepts_work()
                && self.last_heartbeat.contains_key(worker)
                && (!bounded || w.queue_depth() < self.config.admission_depth)
        })
    }

    // ----- completion and failure -----

    pub fn on_heartbeat(&mut self, hb: &Heartbeat, log: &mut EventLog) {
        if let Some(last) = self.last_heartbeat.get_mut(&hb.worker_id) {
            *last = hb.at;
            log.record(hb.at, Event::Heartbeat { worker: hb.worker_id.clone(), power_w: hb.power_watts, queue_depth: hb.queue_depth });
        }
    }

    /// Route a finished batch's outputs: publish, fan out, unblock successors.
    pub fn on_completion(&mut self, worker: &str, result: &BatchResult, now: f64, fleet: &Fleet, log: &mut EventLog) -> Result<(), ControlError> {
        for out in &result.outputs {
            let g = self.groups.get(&out.task).ok_or(ControlError::UnknownOperator(out.task))?;
            let runner = g.runners.iter().find(|r| r.worker == worker && r.batch_id == result.batch_id).cloned();
            let (subject_wf, subject_op) = match g.consumers.first() {
                Some(c) => (c.workflow_id.clone(), c.op_id.clone()),
                None => g.origin.clone(),
            };
            let edge = LineageEdge {
                workflow_id: subject_wf,
                operator_id: subject_op,
                task_identity: g.identity,
                consumed: g.inputs.clone(),
                produced: out.output,
                executed_by: worker.to_string(),
                completed_at: now,
            };
            let outcome = self.cas.publish(g.identity, out.output, edge)?;
            log.record(now, Event::Publish { identity: g.identity, output: out.output, worker: worker.to_string(), outcome });
            if let Some(r) = &runner {
                self.samples.entry(g.signature).or_default().push(now - r.dispatched_at);
            }
            if matches!(g.state, GroupState::Completed | GroupState::Abandoned) {
                continue;
            }
            let bound = match outcome {
                PublishOutcome::Won => out.output,
                PublishOutcome::DuplicateDiscarded => self.cas.lookup_output(&g.identity).expect("bound"),
            };
            let gid = out.task;
            if g.state == GroupState::Ready {
                let key = (g.order_key.clone(), gid);
                let sig = g.signature;
                self.pool.get_mut(&sig).map(|s| s.remove(&key));
            }
            let g = self.groups.get_mut(&gid).expect("exists");
            g.state = GroupState::Completed;
            g.runners.clear();
            let consumers = g.consumers.clone();
            let (identity, inputs) = (g.identity, g.inputs.clone());
            self.deactivate(gid);
            for (i, c) in consumers.iter().enumerate() {
                let executed = i == 0 && outcome == PublishOutcome::Won;
                if executed {
                    self.complete_consumer(c, bound, worker, now, log);
                } else {
                    self.cas.record_edge(cache_edge(c, identity, &inputs, bound, now))?;
                    self.complete_consumer(c, bound, EXECUTED_BY_CACHE, now, log);
                }
            }
        }
        self.drain_worklist(now, fleet, log);
        Ok(())
    }

    /// Return everything a failed worker held to READY and remove it from the fleet.
    pub fn on_worker_failure(&mut self, worker: &str, now: f64, fleet: &mut Fleet, log: &mut EventLog) -> Result<Vec<TaskId>, ControlError> {
        let w = fleet.get_mut(worker).ok_or_else(|| ControlError::UnknownWorker(worker.to_string()))?;
        if matches!(w.status(), WorkerStatus::Failed | WorkerStatus::Retired) {
            return Err(ControlError::UnknownWorker(worker.to_string()));
        }
        let batches = w.remove_failed(now);
        let last = self.last_heartbeat.remove(worker).unwrap_or(now);
        let mut requeued = Vec::new();
        for b in &batches {
            for item in &b.items {
                let Some(g) = self.groups.get_mut(&item.task) else { continue };
                g.runners.retain(|r| !(r.worker == worker && r.batch_id == b.batch_id));
                if g.state == GroupState::Running && g.runners.is_empty() {
                    self.requeue(item.task, now);
                    requeued.push(item.task);
                } else if let Some(r) = g.runners.first_mut() {
                    // A surviving replica becomes the primary and may itself be replicated.
                    r.replica = false;
                    g.replicated = g.runners.len() > 1;
                }
            }
        }
        for wf in self.workflows.values_mut() {
            if wf.pinned.as_deref() == Some(worker) {
                wf.pinned = None;
            }
        }
        log.record(now, Event::WorkerFailed { worker: worker.to_string(), last_heartbeat: last, requeued: requeued.len() });
        Ok(requeued)
    }

    /// Declare failed every worker whose last heartbeat is older than the watchdog period.
    pub fn watchdog_tick(&mut self, now: f64, fleet: &mut Fleet, log: &mut EventLog) -> Vec<WorkerId> {
        let period = self.config.watchdog_period_s;
        let silent: Vec<WorkerId> = self
            .last_heartbeat
            .iter()
            .filter(|(_, last)| now - **last > period)
            .map(|(w, _)| w.clone())
            .collect();
        for w in &silent {
            let _ = self.on_worker_failure(w, now, fleet, log);
        }
        silent
    }

    /// A worker found at execution start that the batch does not fit. Raise
    /// the signature's memory requirement and put the members back.
    pub fn handle_resource_misfit(&mut self, worker: &str, batch: &AdmittedBatch, shortfall: u64, required: u64, now: f64, fleet: &Fleet, log: &mut EventLog) -> Result<(), ControlError> {
        log.record(now, Event::Misfit { worker: worker.to_string(), batch_id: batch.batch_id, shortfall_bytes: shortfall, required_bytes: required });
        let corrected = required + self.config.misfit_margin_bytes;
        let o = self.overrides.entry(batch.signature).or_insert(0);
        *o = (*o).max(corrected);
        for item in &batch.items {
            let Some(g) = self.groups.get_mut(&item.task) else { continue };
            g.runners.retain(|r| !(r.worker == worker && r.batch_id == batch.batch_id));
            if g.state == GroupState::Running && g.runners.is_empty() {
                self.requeue(item.task, now);
            }
        }
        let stranded: Vec<TaskId> = self
            .pool
            .get(&batch.signature)
            .map(|s| s.iter().map(|(_, t)| *t).collect())
            .unwrap_or_default();
        let mut doomed = BTreeSet::new();
        for t in &stranded {
            if !self.capable(fleet, &self.groups[t]) {
                doomed.extend(self.groups[t].consumers.iter().map(|c| c.workflow_id.clone()));
            }
        }
        if doomed.is_empty() {
            return Ok(());
        }
        let err = ControlError::NoCapableWorker { signature: batch.signature, required_bytes: corrected };
        for wf in doomed {
            self.fail_workflow(&wf, &err.to_string(), now, log);
        }
        Err(err)
    }

    /// A batch that could not start at all (missing input or profile): its
    /// consumers' workflows fail.
    pub fn on_batch_failed(&mut self, worker: &str, batch: &AdmittedBatch, reason: &str, now: f64, log: &mut EventLog) {
        let mut doomed = BTreeSet::new();
        for item in &batch.items {
            let Some(g) = self.groups.get_mut(&item.task) else { continue };
            g.runners.retain(|r| !(r.worker == worker && r.batch_id == batch.batch_id));
            if g.state == GroupState::Running && g.runners.is_empty() {
                doomed.extend(g.consumers.iter().map(|c| c.workflow_id.clone()));
                g.state = GroupState::Abandoned;
                let id = g.id;
                self.deactivate(id);
            }
        }
        for wf in doomed {
            self.fail_workflow(&wf, reason, now, log);
        }
    }

    /// Fail whatever is left, e.g. at the end of a bounded run.
    pub fn fail_unfinished(&mut self, reason: &str, now: f64, log: &mut EventLog) {
        for wf in self.unfinished() {
            self.fail_workflow(&wf, reason, now, log);
        }
    }

    /// Check the bookkeeping invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut pooled = BTreeMap::new();
        for (sig, set) in &self.pool {
            for (key, t) in set {
                let g = self.groups.get(t).ok_or(format!("pool holds unknown task {t}"))?;
                if g.state != GroupState::Ready || g.signature != *sig || g.order_key != *key {
                    return Err(format!("pool entry {t} inconsistent with group state {:?}", g.state));
                }
                if pooled.insert(*t, *sig).is_some() {
                    return Err(format!("task {t} pooled twice"));
                }
            }
        }
        for g in self.groups.values() {
            match g.state {
                GroupState::Ready if !pooled.contains_key(&g.id) => return Err(format!("ready task {} not pooled", g.id)),
                GroupState::Running if g.runners.is_empty() => return Err(format!("running task {} has no runner", g.id)),
                _ => {}
            }
            if g.runners.iter().filter(|r| !r.replica).count() > 1 {
                return Err(format!("task {} has two primaries", g.id));
            }
        }
        for (id, wf) in &self.workflows {
            let mut live = 0;
            for (op, slot) in &wf.slots {
                match slot {
                    Slot::Completed => {
                        let out = wf.outputs.get(op).ok_or(format!("{id}/{op} completed without output"))?;
                        if !self.cas.has(out) {
                            return Err(format!("{id}/{op} output missing from store"));
                        }
                    }
                    Slot::Group(g) => {
                        live += 1;
                        let grp = self.groups.get(g).ok_or(format!("{id}/{op} in unknown group"))?;
                        if !matches!(grp.state, GroupState::Ready | GroupState::Running) {
                            return Err(format!("{id}/{op} attached to a {:?} group", grp.state));
                        }
                        if !grp.consumers.iter().any(|c| c.workflow_id == *id && c.op_id == *op) {
                            return Err(format!("{id}/{op} missing from its group's consumers"));
                        }
                        if wf.dag.predecessors(op).any(|p| wf.slots.get(p) != Some(&Slot::Completed)) {
                            return Err(format!("{id}/{op} ready before its predecessors"));
                        }
                    }
                    Slot::Blocked | Slot::Failed => {}
                }
            }
            let completed = wf.slots.values().filter(|s| **s == Slot::Completed).count();
            if wf.outcome.is_none() && completed + wf.remaining != wf.slots.len() {
                return Err(format!("{id}: {completed} completed + {} remaining != {}", wf.remaining, wf.slots.len()));
            }
            if wf.outcome.is_some() && live > 0 {
                return Err(format!("{id}: terminal workflow still has live operators"));
            }
        }
        Ok(())
    }
}
