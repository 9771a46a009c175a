//! The discrete-event loop that drives the control plane and the simulated fleet.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::sync::Arc;

use crate::cas::CasStore;
use crate::control::{ControlConfig, ControlPlane};
use crate::events::{Event, EventLog};
use crate::worker::{ExecutionBackend, Fleet, SimulatedBackend, StartedBatch, Visibility, WorkerError, WorkerId, WorkerStatus};
use crate::workflow::{compile_workflow_value, ResourceClass, WorkflowDag};

use super::config::{ConfigError, FailureKind, ScenarioConfig};
use super::metrics::{compute_metrics, MetricsError, MetricsReport};
use super::workload::build_workload;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("workflow `{index}` in the workload does not compile: {message}")]
    Workload { index: usize, message: String },
    #[error("failure selector `{0}` matches no live worker")]
    UnknownSelector(String),
    #[error("invariant violated at t={t}: {message}")]
    Invariant { t: f64, message: String },
    #[error(transparent)]
    Control(#[from] crate::control::ControlError),
    #[error(transparent)]
    Cas(#[from] crate::cas::CasError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Everything a run produces.
#[derive(Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub log: EventLog,
    pub cas: Arc<CasStore>,
    /// Cost and energy per worker as tracked by the workers themselves.
    pub worker_totals: BTreeMap<WorkerId, (f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Action {
    Heartbeat(WorkerId),
    Failure(usize),
    BatchDone(WorkerId, u64),
    ExecStart(WorkerId, u64),
    WorkerReady(WorkerId),
    Submit(usize),
    Tick,
}

impl Action {
    /// Same-time ordering: a heartbeat due at the instant of a failure lands first.
    fn priority(&self) -> u8 {
        match self {
            Action::Heartbeat(_) => 0,
            Action::Failure(_) => 1,
            Action::BatchDone(..) => 2,
            Action::ExecStart(..) => 3,
            Action::WorkerReady(_) => 4,
            Action::Submit(_) => 5,
            Action::Tick => 6,
        }
    }
}

#[derive(Debug, PartialEq)]
struct Scheduled {
    at: f64,
    priority: u8,
    seq: u64,
    action: Action,
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.at
            .total_cmp(&other.at)
            .then(self.priority.cmp(&other.priority))
            .then(self.seq.cmp(&other.seq))
    }
}

struct Engine {
    scenario: ScenarioConfig,
    config: ControlConfig,
    cp: ControlPlane,
    fleet: Fleet,
    log: EventLog,
    cas: Arc<CasStore>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    now: f64,
    dags: Vec<Option<WorkflowDag>>,
    submitted: usize,
    started: HashMap<(WorkerId, u64), StartedBatch>,
    power: BTreeMap<WorkerId, f64>,
}

/// Run a scenario to completion.
pub fn run_scenario(scenario: &ScenarioConfig) -> Result<RunOutput, SimError> {
    run_with_backend(scenario, Arc::new(SimulatedBackend))
}

/// Run with a custom execution backend (timing and output bytes).
pub fn run_with_backend(scenario: &ScenarioConfig, backend: Arc<dyn ExecutionBackend>) -> Result<RunOutput, SimError> {
    scenario.validate()?;
    let config = scenario.control_config()?;
    let resources = Arc::new(scenario.resources());
    let cas = Arc::new(CasStore::in_memory());
    let workload = build_workload(&scenario.workload, scenario.seed);
    let mut dags = Vec::with_capacity(workload.workflows.len());
    for (index, w) in workload.workflows.iter().enumerate() {
        let mut dag = compile_workflow_value(&w.document).map_err(|e| SimError::Workload { index, message: e.to_string() })?;
        dag.submit_time = w.at_s;
        dags.push(Some(dag));
    }
    let mut engine = Engine {
        scenario: scenario.clone(),
        cp: ControlPlane::new(config.clone(), resources.clone(), cas.clone()),
        config,
        fleet: Fleet::new(resources, backend),
        log: EventLog::default(),
        cas: cas.clone(),
        queue: BinaryHeap::new(),
        seq: 0,
        now: 0.0,
        dags,
        submitted: 0,
        started: HashMap::new(),
        power: BTreeMap::new(),
    };
    engine.log.record(0.0, Event::RunStart {
        scenario: scenario.name.clone(),
        policy: scenario.policy.to_string(),
        seed: scenario.seed,
    });
    for blob in &workload.blobs {
        cas.put(blob)?;
    }
    for (profile, vis) in scenario.initial_fleet()? {
        let id = engine.provision(&profile, vis, 0.0);
        engine.cp.on_worker_ready(&id, 0.0, &mut engine.fleet, &mut engine.log)?;
        engine.push(engine.config.heartbeat_interval_s, Action::Heartbeat(id));
    }
    for (i, w) in workload.workflows.iter().enumerate() {
        engine.push(w.at_s, Action::Submit(i));
    }
    for (i, f) in scenario.failures.iter().enumerate() {
        engine.push(f.at_s, Action::Failure(i));
    }
    engine.push(0.0, Action::Tick);
    engine.run()?;

    let end = engine.now;
    let worker_totals = engine
        .fleet
        .iter()
        .map(|w| (w.id().to_string(), (w.cost(end), w.energy_joules(end))))
        .collect();
    let report = compute_metrics(engine.log.records())?;
    Ok(RunOutput { report, log: engine.log, cas, worker_totals })
}

impl Engine {
    fn push(&mut self, at: f64, action: Action) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { at, priority: action.priority(), seq, action }));
    }

    fn horizon(&self) -> f64 {
        5.0 * self.scenario.duration_s + 3600.0
    }

    fn provision(&mut self, profile: &crate::worker::ClassProfile, vis: Visibility, ready_at: f64) -> WorkerId {
        let id = self.fleet.provision(profile, self.now, vis);
        self.log.record(self.now, Event::WorkerProvisioned {
            worker: id.clone(),
            class: profile.class,
            cost_rate: profile.cost_rate,
            idle_power_w: profile.idle_power_watts,
            peak_power_w: profile.peak_power_watts,
            ready_at,
        });
        self.sync_power();
        id
    }

    fn run(&mut self) -> Result<(), SimError> {
        while let Some(Reverse(next)) = self.queue.pop() {
            self.now = next.at;
            let done = self.handle(next.action)?;
            self.sync_power();
            if self.scenario.check_invariants {
                self.cp
                    .check_invariants()
                    .map_err(|message| SimError::Invariant { t: self.now, message })?;
            }
            if done {
                break;
            }
        }
        self.log.record(self.now, Event::RunEnd);
        Ok(())
    }

    /// Log a power sample for every worker whose draw changed.
    fn sync_power(&mut self) {
        for w in self.fleet.iter() {
            let watts = w.power_watts();
            if self.power.get(w.id()) != Some(&watts) {
                self.power.insert(w.id().to_string(), watts);
                self.log.record(self.now, Event::Power { worker: w.id().to_string(), watts });
            }
        }
    }

    fn handle(&mut self, action: Action) -> Result<bool, SimError> {
        let now = self.now;
        match action {
            Action::Tick => return self.tick(),
            Action::Submit(i) => {
                let dag = self.dags[i].take().expect("submitted once");
                self.submitted += 1;
                self.cp.submit_workflow(dag, now, &self.fleet, &mut self.log)?;
                self.schedule();
            }
            Action::Heartbeat(id) => {
                let Some(w) = self.fleet.get(&id) else { return Ok(false) };
                if let Some(hb) = w.heartbeat(now) {
                    self.cp.on_heartbeat(&hb, &mut self.log);
                    self.push(now + self.config.heartbeat_interval_s, Action::Heartbeat(id));
                }
            }
            Action::WorkerReady(id) => {
                if self.fleet.get(&id).is_some_and(|w| w.status() == WorkerStatus::Warming) {
                    self.cp.on_worker_ready(&id, now, &mut self.fleet, &mut self.log)?;
                    self.push(now + self.config.heartbeat_interval_s, Action::Heartbeat(id));
                    self.schedule();
                }
            }
            Action::Failure(i) => self.inject_failure(i)?,
            Action::ExecStart(id, batch) => self.exec_start(&id, batch)?,
            Action::BatchDone(id, batch) => self.batch_done(&id, batch)?,
        }
        Ok(false)
    }

    fn tick(&mut self) -> Result<bool, SimError> {
        let now = self.now;
        self.cp.watchdog_tick(now, &mut self.fleet, &mut self.log);
        self.schedule();
        let replicas = self.cp.speculate(now, &mut self.fleet, &mut self.log);
        for d in replicas {
            self.kick(&d.worker_id)?;
        }
        let delta = self.cp.autoscale_tick(now, &mut self.fleet, &mut self.log);
        for (id, ready_at) in delta.provisioned {
            self.push(ready_at, Action::WorkerReady(id));
        }
        let all_in = self.submitted == self.dags.len();
        if now >= self.scenario.duration_s && all_in && self.cp.all_terminal() {
            return Ok(true);
        }
        if now >= self.horizon() {
            self.cp.fail_unfinished("run exceeded its time horizon", now, &mut self.log);
            return Ok(true);
        }
        self.push(now + self.config.tick_s, Action::Tick);
        Ok(false)
    }

    /// Place ready work and start any worker that received some.
    fn schedule(&mut self) {
        let decisions = self.cp.schedule_step(self.now, &mut self.fleet, &mut self.log);
        let mut workers: Vec<WorkerId> = decisions.into_iter().map(|d| d.worker_id).collect();
        workers.sort();
        workers.dedup();
        for w in workers {
            // Inputs were resolved at readiness; a failure here is handled inside.
            let _ = self.kick(&w);
        }
    }

    /// Begin the worker's next queued batch if it is free.
    fn kick(&mut self, id: &str) -> Result<(), SimError> {
        loop {
            let Some(w) = self.fleet.get_mut(id) else { return Ok(()) };
            match w.start_next(self.now, &self.cas) {
                None => return Ok(()),
                Some(Ok(started)) => {
                    self.log.record(self.now, Event::Load {
                        worker: id.to_string(),
                        batch_id: started.batch_id,
                        signature: started.signature,
                        fetch_s: started.fetch_s,
                        load_s: started.load_s,
                        evicted: started.evicted.clone(),
                    });
                    self.push(started.exec_at, Action::ExecStart(id.to_string(), started.batch_id));
                    self.started.insert((id.to_string(), started.batch_id), started);
                    return Ok(());
                }
                Some(Err((batch, err))) => {
                    if let WorkerError::InputUnavailable(h) = &err {
                        self.log.record(self.now, Event::InputUnavailable { worker: id.to_string(), batch_id: batch.batch_id, missing: *h });
                    }
                    self.cp.on_batch_failed(id, &batch, &err.to_string(), self.now, &mut self.log);
                }
            }
        }
    }

    /// Whether `id` is still making progress on `batch`.
    fn live_batch(&self, id: &str, batch: u64) -> bool {
        self.fleet.get(id).is_some_and(|w| {
            w.is_alive() && !w.is_hung() && w.running_batch().is_some_and(|b| b.batch_id == batch)
        })
    }

    fn exec_start(&mut self, id: &str, batch: u64) -> Result<(), SimError> {
        if !self.live_batch(id, batch) {
            return Ok(());
        }
        let started = self.started.get(&(id.to_string(), batch)).expect("started batch").clone();
        let w = self.fleet.get_mut(id).expect("live");
        match w.begin_exec(self.now) {
            Ok(_) => {
                self.log.record(self.now, Event::ExecStart { worker: id.to_string(), batch_id: batch, size: started.size, duration_s: started.exec_s });
                self.push(self.now + started.exec_s, Action::BatchDone(id.to_string(), batch));
            }
            Err((b, WorkerError::ResourceShortage { shortfall, required })) => {
                self.started.remove(&(id.to_string(), batch));
                // Workflows with nowhere left to go fail inside; the run continues.
                let _ = self.cp.handle_resource_misfit(id, &b, shortfall, required, self.now, &self.fleet, &mut self.log);
                self.kick(id)?;
                self.schedule();
            }
            Err((b, err)) => {
                self.started.remove(&(id.to_string(), batch));
                self.cp.on_batch_failed(id, &b, &err.to_string(), self.now, &mut self.log);
                self.kick(id)?;
            }
        }
        Ok(())
    }

    fn batch_done(&mut self, id: &str, batch: u64) -> Result<(), SimError> {
        if !self.live_batch(id, batch) {
            return Ok(());
        }
        self.started.remove(&(id.to_string(), batch));
        let w = self.fleet.get_mut(id).expect("live");
        let result = w.finish(self.now, &self.cas).map_err(|e| match e {
            WorkerError::Cas(c) => SimError::Cas(c),
            other => SimError::Invariant { t: self.now, message: other.to_string() },
        })?;
        self.log.record(self.now, Event::BatchDone { worker: id.to_string(), batch_id: batch, size: result.outputs.len() });
        self.cp.on_completion(id, &result, self.now, &self.fleet, &mut self.log)?;
        self.kick(id)?;
        self.schedule();
        Ok(())
    }

    fn select(&self, selector: &str) -> Option<WorkerId> {
        let usable = |w: &&crate::worker::Worker| w.is_alive() && !w.is_crashed();
        match selector.strip_prefix("class:") {
            Some(class) => {
                let class: ResourceClass = class.parse().ok()?;
                // Prefer a worker that is mid-batch, then the lowest id.
                let mut matching: Vec<_> = self.fleet.iter().filter(usable).filter(|w| w.class() == class).collect();
                matching.sort_by_key(|w| w.running_batch().is_none());
                matching.first().map(|w| w.id().to_string())
            }
            None => self.fleet.get(selector).filter(usable).map(|w| w.id().to_string()),
        }
    }

    fn inject_failure(&mut self, i: usize) -> Result<(), SimError> {
        let spec = self.scenario.failures[i].clone();
        let id = self.select(&spec.worker).ok_or_else(|| SimError::UnknownSelector(spec.worker.clone()))?;
        self.log.record(self.now, Event::FailureInjected { worker: id.clone(), kind: spec.kind.as_str().to_string() });
        let w = self.fleet.get_mut(&id).expect("selected");
        match spec.kind {
            FailureKind::Crash => w.crash(self.now),
            FailureKind::SilentHang => w.hang(),
        }
        Ok(())
    }
}
