//! Placement: the utility scheduler, its round-robin ablation, the three
//! baselines, and speculative replication.

use crate::digest::ExecSignature;
use crate::events::{Event, EventLog};
use crate::worker::{Fleet, TaskId, WorkerDescriptor, WorkerId};
use crate::workflow::{OperatorKind, OperatorSpec, ResourceClass};

use super::utility::{p95, prefix_sizes, select_best, Candidate};
use super::{ControlPlane, GroupState, Policy, ScheduleDecision};

impl ControlPlane {
    /// Place as much ready work as the fleet can take right now.
    pub fn schedule_step(&mut self, now: f64, fleet: &mut Fleet, log: &mut EventLog) -> Vec<ScheduleDecision> {
        let mut out = Vec::new();
        loop {
            let next = match self.config.policy {
                Policy::FlowMesh if self.config.ablation.multi_objective => self.pick_utility(fleet),
                Policy::FlowMesh => self.pick_round_robin(fleet),
                Policy::MfFirstFit => self.pick_monolithic(fleet),
                Policy::DsStatic => self.pick_static(fleet),
                Policy::DrRoundRobin => self.pick_dynamic_rr(fleet),
            };
            let Some(c) = next else { break };
            match self.dispatch(fleet, &c.worker, c.tasks, c.utility, false, now, log) {
                Some(d) => out.push(d),
                None => break,
            }
        }
        out
    }

    fn eligible_workers(&self, fleet: &Fleet, bounded: bool) -> Vec<WorkerId> {
        fleet
            .iter()
            .filter(|w| self.has_room(fleet, w.id(), bounded))
            .map(|w| w.id().to_string())
            .collect()
    }

    /// Ready groups of `sig` that `worker` may host, FCFS.
    fn placeable(&self, worker: &WorkerDescriptor, sig: &ExecSignature) -> Vec<TaskId> {
        self.pool
            .get(sig)
            .into_iter()
            .flatten()
            .map(|(_, t)| *t)
            .filter(|t| self.groups[t].admitted_by(&worker.tenant_visibility))
            .collect()
    }

    /// Every feasible (worker, FCFS prefix) pair scored by utility; best wins.
    pub(crate) fn candidates(&self, fleet: &Fleet) -> Vec<Candidate> {
        let workers = self.eligible_workers(fleet, true);
        let mut cands = Vec::new();
        for sig in self.pool.keys() {
            for wid in &workers {
                let desc = &fleet.get(wid).expect("eligible").descriptor;
                let queue = self.placeable(desc, sig);
                let Some(first) = queue.first() else { continue };
                let max = self.config.max_batch_for(self.groups[first].spec.op_kind);
                for n in prefix_sizes(queue.len(), max) {
                    let tasks = &queue[..n];
                    if !self.feasible(desc, tasks) {
                        continue;
                    }
                    let utility = self
                        .estimate_utility(fleet, wid, tasks, &self.config.weights)
                        .expect("feasible pair has a utility");
                    cands.push(Candidate {
                        worker: wid.clone(),
                        signature: *sig,
                        tasks: tasks.to_vec(),
                        first_key: self.groups[first].order_key.clone(),
                        utility,
                    });
                }
            }
        }
        cands
    }

    fn pick_utility(&self, fleet: &Fleet) -> Option<Candidate> {
        let mut cands = self.candidates(fleet);
        select_best(&cands, &self.config.weights).map(|i| cands.swap_remove(i))
    }

    /// Largest feasible FCFS prefix of the earliest placeable signature.
    fn largest_prefix(&self, desc: &WorkerDescriptor) -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        for sig in self.pool.keys() {
            let queue = self.placeable(desc, sig);
            let Some(first) = queue.first() else { continue };
            let key = &self.groups[first].order_key;
            if best.as_ref().is_some_and(|b| b.first_key <= *key) {
                continue;
            }
            let max = self.config.max_batch_for(self.groups[first].spec.op_kind);
            if let Some(n) = prefix_sizes(queue.len(), max).into_iter().find(|n| self.feasible(desc, &queue[..*n])) {
                best = Some(Candidate {
                    worker: desc.worker_id.clone(),
                    signature: *sig,
                    tasks: queue[..n].to_vec(),
                    first_key: key.clone(),
                    utility: 0.0,
                });
            }
        }
        best
    }

    fn pick_round_robin(&mut self, fleet: &Fleet) -> Option<Candidate> {
        let workers = self.eligible_workers(fleet, true);
        let n = workers.len();
        for i in 0..n {
            let wid = &workers[(self.rr_cursor + i) % n];
            if let Some(c) = self.largest_prefix(&fleet.get(wid).expect("eligible").descriptor) {
                self.rr_cursor = (self.rr_cursor + i + 1) % n;
                return Some(c);
            }
        }
        None
    }

    /// Ready groups of every signature in global FCFS order.
    fn fcfs(&self) -> Vec<TaskId> {
        let mut all: Vec<_> = self.pool.values().flatten().collect();
        all.sort();
        all.into_iter().map(|(_, t)| *t).collect()
    }

    fn single(&self, worker: &WorkerId, task: TaskId) -> Candidate {
        let g = &self.groups[&task];
        Candidate { worker: worker.clone(), signature: g.signature, tasks: vec![task], first_key: g.order_key.clone(), utility: 0.0 }
    }

    /// Whether `worker` could run `spec` alone.
    fn hosts(&self, worker: &WorkerDescriptor, spec: &OperatorSpec) -> bool {
        let Ok(sig) = spec.exec_signature() else { return false };
        worker.satisfies(spec.resource_class)
            && worker.tenant_visibility.admits(spec.affinity, &spec.tenant_id)
            && self
                .memory_requirement(spec, &sig, 1, worker.resource_class)
                .is_some_and(|m| m <= worker.vram_bytes)
    }

    /// Monolithic first-fit: each workflow is pinned to one worker that can
    /// host all of its operators, one workflow per worker.
    fn pick_monolithic(&mut self, fleet: &Fleet) -> Option<Candidate> {
        let workers = self.eligible_workers(fleet, false);
        for t in self.fcfs() {
            let wf_id = self.groups[&t].consumers[0].workflow_id.clone();
            let wf = &self.workflows[&wf_id];
            if let Some(p) = &wf.pinned {
                if workers.contains(p) && self.feasible(&fleet.get(p).expect("pinned").descriptor, &[t]) {
                    return Some(self.single(p, t));
                }
                continue;
            }
            let taken: Vec<&WorkerId> = self.workflows.values().filter_map(|w| w.pinned.as_ref()).collect();
            let host = workers.iter().find(|wid| {
                let desc = &fleet.get(wid).expect("eligible").descriptor;
                !taken.contains(wid) && wf.dag.nodes.values().all(|spec| self.hosts(desc, spec))
            });
            if let Some(wid) = host.cloned() {
                self.workflows.get_mut(&wf_id).expect("exists").pinned = Some(wid.clone());
                return Some(self.single(&wid, t));
            }
        }
        None
    }

    /// Disaggregated static: each operator kind has a designated class;
    /// least-loaded designated worker, else least-loaded feasible worker.
    fn pick_static(&self, fleet: &Fleet) -> Option<Candidate> {
        let workers = self.eligible_workers(fleet, false);
        let least_loaded = |ws: &mut dyn Iterator<Item = &WorkerId>| {
            ws.min_by_key(|w| (fleet.get(w).expect("eligible").queue_depth(), (*w).clone())).cloned()
        };
        for t in self.fcfs() {
            let designated = designated_class(self.groups[&t].spec.op_kind);
            let fits = |w: &&WorkerId| self.feasible(&fleet.get(w).expect("eligible").descriptor, &[t]);
            let pick = least_loaded(&mut workers.iter().filter(fits).filter(|w| fleet.get(w).expect("eligible").class() == designated))
                .or_else(|| least_loaded(&mut workers.iter().filter(fits)));
            if let Some(wid) = pick {
                return Some(self.single(&wid, t));
            }
        }
        None
    }

    /// Disaggregated round-robin over feasible workers.
    fn pick_dynamic_rr(&mut self, fleet: &Fleet) -> Option<Candidate> {
        let workers = self.eligible_workers(fleet, false);
        let n = workers.len();
        for t in self.fcfs() {
            for i in 0..n {
                let idx = (self.rr_cursor + i) % n;
                if self.feasible(&fleet.get(&workers[idx]).expect("eligible").descriptor, &[t]) {
                    self.rr_cursor = (idx + 1) % n;
                    return Some(self.single(&workers[idx], t));
                }
            }
        }
        None
    }

    /// Latency above which a running task is replicated.
    pub fn speculation_threshold(&self, sig: &ExecSignature, predicted_s: f64) -> f64 {
        let factor = self.config.speculation_factor;
        match self.samples.get(sig) {
            Some(s) if s.len() >= self.config.speculation_min_samples => factor * p95(s).expect("non-empty"),
            _ => factor * self.config.admission_depth as f64 * predicted_s,
        }
    }

    /// Replicate each straggler once onto a different worker; the first
    /// completion wins and the loser's output is discarded.
    pub fn speculate(&mut self, now: f64, fleet: &mut Fleet, log: &mut EventLog) -> Vec<ScheduleDecision> {
        if !self.config.speculates() {
            return Vec::new();
        }
        let stragglers: Vec<(TaskId, WorkerId, f64, f64)> = self
            .groups
            .values()
            .filter(|g| g.state == GroupState::Running && !g.replicated && !g.consumers.is_empty())
            .filter_map(|g| {
                let primary = g.runners.iter().find(|r| !r.replica)?;
                let threshold = self.speculation_threshold(&g.signature, primary.predicted_s);
                let elapsed = now - primary.dispatched_at;
                (elapsed > threshold).then(|| (g.id, primary.worker.clone(), elapsed, threshold))
            })
            .collect();
        let mut out = Vec::new();
        for (task, primary, elapsed, threshold) in stragglers {
            let cands: Vec<Candidate> = self
                .eligible_workers(fleet, true)
                .into_iter()
                .filter(|w| *w != primary && self.feasible(&fleet.get(w).expect("eligible").descriptor, &[task]))
                .map(|w| {
                    let mut c = self.single(&w, task);
                    c.utility = self.estimate_utility(fleet, &w, &[task], &self.config.weights).expect("feasible");
                    c
                })
                .collect();
            let best = if self.config.ablation.multi_objective {
                select_best(&cands, &self.config.weights)
            } else {
                // Round-robin fallback: next eligible worker in rotation.
                let workers = self.eligible_workers(fleet, true);
                let n = workers.len();
                (0..n).find_map(|i| {
                    let w = &workers[(self.rr_cursor + i) % n];
                    let hit = cands.iter().position(|c| c.worker == *w)?;
                    self.rr_cursor = (self.rr_cursor + i + 1) % n;
                    Some(hit)
                })
            };
            let Some(best) = best else { continue };
            let c = &cands[best];
            log.record(now, Event::Speculate {
                task,
                identity: self.groups[&task].identity,
                primary_worker: primary,
                elapsed_s: elapsed,
                threshold_s: threshold,
            });
            if let Some(d) = self.dispatch(fleet, &c.worker, vec![task], c.utility, true, now, log) {
                out.push(d);
            }
        }
        out
    }
}

fn designated_class(kind: OperatorKind) -> ResourceClass {
    match kind {
        OperatorKind::Inference => ResourceClass::H100_94g,
        OperatorKind::Sft | OperatorKind::Dpo | OperatorKind::Ppo => ResourceClass::Rtx4090_48g,
        OperatorKind::DataPrep | OperatorKind::ToolCall | OperatorKind::Eval => ResourceClass::Rtx4090_24g,
    }
}
