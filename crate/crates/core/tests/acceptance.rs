//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to see them.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use flowmesh::cas::{CasStore, PublishOutcome};
use flowmesh::control::{Ablation, ControlConfig, ControlPlane, GroupState, Policy, UtilityWeights};
use flowmesh::digest::{ContentHash, ExecSignature};
use flowmesh::events::{Event, EventLog};
use flowmesh::sim::{compute_metrics, run_scenario, MetricsReport, RunOutput, ScenarioConfig, WeightsSpec};
use flowmesh::worker::{
    AdmittedBatch, BatchItem, ClassProfile, Fleet, MemoryModel, ResourceModel, SimulatedBackend, Visibility, Worker, WorkerDescriptor, WorkerError, GIB,
};
use flowmesh::workflow::{compile_workflow_value, OperatorKind, OperatorSpec, ResourceClass};

type Outcome = Result<String, String>;

fn load(name: &str) -> ScenarioConfig {
    let path = format!("{}/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    ScenarioConfig::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn run(cfg: &ScenarioConfig) -> RunOutput {
    run_scenario(cfg).unwrap_or_else(|e| panic!("{} seed {}: {e}", cfg.name, cfg.seed))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn dedup_exactness() -> Outcome {
    let started = Instant::now();
    let out = run(&load("dedup_sft_prefix"));
    let elapsed = started.elapsed().as_secs_f64();
    let sft_done: Vec<&str> = out
        .log
        .iter()
        .filter_map(|r| match &r.event {
            Event::OperatorCompleted { operator_id, executed_by, .. } if operator_id == "b_sft" => Some(executed_by.as_str()),
            _ => None,
        })
        .collect();
    let sft_exec = sft_done.iter().filter(|by| **by != "cache").count();
    let mut edges = 0;
    let mut cache_edges = 0;
    for i in 0..10 {
        for e in out.cas.replay(&format!("sft-{i:02}")).unwrap().into_iter().filter(|e| e.operator_id == "b_sft") {
            edges += 1;
            cache_edges += usize::from(e.from_cache());
        }
    }
    let sft_sig = compile_workflow_value(&json!({"workflow_id": "probe", "tenant_id": "t", "nodes": {
        "b_sft": {"op_kind": "sft", "model_ref": "llama-3.1-8b", "resource_class": "class_h100_94g", "params": {"lr": 2e-05, "epochs": 1}}}}))
    .unwrap()
    .nodes["b_sft"]
    .exec_signature()
    .unwrap();
    let sft_runs: usize = out
        .log
        .iter()
        .filter_map(|r| match &r.event {
            Event::ExecStart { worker, batch_id, size, .. } => Some((worker, *batch_id, *size)),
            _ => None,
        })
        .filter(|(w, b, _)| {
            out.log.iter().any(|r| matches!(&r.event, Event::Dispatch { worker, batch_id, signature, .. } if worker == *w && batch_id == b && *signature == sft_sig))
        })
        .map(|(_, _, n)| n)
        .sum();
    check(
        sft_exec == 1 && sft_runs == 1 && sft_done.len() == 10 && edges == 10 && cache_edges == 9 && elapsed < 5.0,
        format!("sft executed {sft_runs}x, completions {}, lineage edges {edges} ({cache_edges} cache), {elapsed:.2}s", sft_done.len()),
    )
}

// ---------------------------------------------------------------- 2

/// Independent brute-force placement: enumerate every feasible (worker,
/// FCFS prefix) pair, score it from the raw profile table, keep the
/// maximum under the documented tie-break, apply it, repeat.
struct Oracle {
    res: ResourceModel,
    mem: MemoryModel,
    weights: UtilityWeights,
    depth: usize,
    /// Corrected footprints learned from misfits, read from the control plane.
    overrides: BTreeMap<ExecSignature, u64>,
}

struct OracleWorker {
    id: String,
    class: ResourceClass,
    rate: f64,
    depth: usize,
    resident: BTreeSet<ExecSignature>,
    artifacts: BTreeSet<ContentHash>,
}

struct OracleTask {
    id: u64,
    seq: usize,
    spec: OperatorSpec,
    sig: ExecSignature,
    input: ContentHash,
}

#[derive(Debug, PartialEq)]
struct Pick {
    worker: String,
    tasks: Vec<u64>,
    utility: f64,
}

fn class_covers(host: ResourceClass, need: ResourceClass) -> bool {
    host.vram_bytes() >= need.vram_bytes() && host.arch_generation() >= need.arch_generation()
}

fn prefixes(len: usize, max: usize) -> Vec<usize> {
    let mut v = vec![];
    for s in [max, max.div_ceil(2), 1] {
        let s = s.min(len);
        if s > 0 && !v.contains(&s) {
            v.push(s);
        }
    }
    v
}

impl Oracle {
    fn throughput(&self, spec: &OperatorSpec, class: ResourceClass, n: usize) -> Option<f64> {
        let e = self.res.perf.get(spec.op_kind, &spec.model_ref, class)?;
        Some(n as f64 / (e.base_latency_s + e.per_item_latency_s * (n as f64).powf(e.alpha)))
    }

    fn fits(&self, spec: &OperatorSpec, sig: &ExecSignature, class: ResourceClass, n: usize) -> bool {
        let Some(e) = self.res.perf.get(spec.op_kind, &spec.model_ref, class) else { return false };
        let weights = spec.params.get("mem_gb").and_then(|v| v.as_f64()).map_or(e.mem_footprint_bytes, |gb| (gb * GIB as f64) as u64);
        let need = weights + n as u64 * self.mem.activation(spec.op_kind);
        need.max(self.overrides.get(sig).copied().unwrap_or(0)) <= class.vram_bytes()
    }

    fn step(&self, workers: &mut [OracleWorker], mut queue: Vec<&OracleTask>) -> Vec<Pick> {
        let mut picks = vec![];
        loop {
            let mut sigs: Vec<ExecSignature> = queue.iter().map(|t| t.sig).collect();
            sigs.sort();
            sigs.dedup();
            let rate_max = workers.iter().map(|w| w.rate).fold(0.0, f64::max);
            // (utility, worker index, first seq, n, sig)
            let mut cands: Vec<(f64, usize, usize, usize, ExecSignature)> = vec![];
            for sig in &sigs {
                let q: Vec<&OracleTask> = queue.iter().copied().filter(|t| t.sig == *sig).collect();
                let spec = &q[0].spec;
                let max = if spec.op_kind.is_training() { 12 } else { 24 };
                for (wi, w) in workers.iter().enumerate() {
                    if w.depth >= self.depth || !class_covers(w.class, spec.resource_class) {
                        continue;
                    }
                    for n in prefixes(q.len(), max) {
                        if !self.fits(spec, sig, w.class, n) {
                            continue;
                        }
                        let t_max = workers
                            .iter()
                            .filter(|x| class_covers(x.class, spec.resource_class))
                            .filter_map(|x| self.throughput(spec, x.class, n))
                            .fold(0.0, f64::max);
                        let t_eff = self.throughput(spec, w.class, n).unwrap() / t_max;
                        let inputs: BTreeSet<ContentHash> = q[..n].iter().map(|t| t.input).collect();
                        let cached = inputs.iter().filter(|h| w.artifacts.contains(h)).count() as f64 / inputs.len() as f64;
                        let model_local = w.artifacts.contains(&spec.model_hash());
                        let g = 0.6 * if w.resident.contains(sig) { 1.0 } else { 0.0 } + 0.3 * cached + 0.1 * if model_local { 1.0 } else { 0.0 };
                        let u = self.weights.w_t * t_eff - self.weights.w_c * (w.rate / rate_max) + self.weights.w_l * g;
                        cands.push((u, wi, q[0].seq, n, *sig));
                    }
                }
            }
            let Some(best) = cands.iter().map(|c| c.0).reduce(f64::max) else { break };
            let tol = 1e-9 * (self.weights.w_t + self.weights.w_c + self.weights.w_l);
            let win = cands
                .into_iter()
                .filter(|c| c.0 >= best - tol)
                .min_by_key(|c| (workers[c.1].id.clone(), c.2, Reverse(c.3), c.4))
                .unwrap();
            let (u, wi, _, n, sig) = win;
            let mut taken = vec![];
            let mut i = 0;
            while taken.len() < n {
                if queue[i].sig == sig {
                    taken.push(queue.remove(i).id);
                } else {
                    i += 1;
                }
            }
            workers[wi].depth += 1;
            picks.push(Pick { worker: workers[wi].id.clone(), tasks: taken, utility: u });
        }
        picks
    }
}

fn random_weights(rng: &mut ChaCha8Rng) -> UtilityWeights {
    match rng.random_range(0..4) {
        0 => UtilityWeights::default(),
        1 => UtilityWeights::cost_first(),
        2 => UtilityWeights::performance_first(),
        _ => UtilityWeights { w_t: rng.random_range(0.05..3.0), w_c: rng.random_range(0.05..3.0), w_l: rng.random_range(0.0..2.0) },
    }
}

fn oracle_instance(seed: u64) -> Result<(usize, usize), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = Arc::new(ResourceModel::default());
    let cas = Arc::new(CasStore::in_memory());
    let weights = random_weights(&mut rng);
    let config = ControlConfig { weights, ablation: Ablation { elasticity: false, ..Ablation::default() }, ..ControlConfig::default() };
    let mut cp = ControlPlane::new(config, res.clone(), cas.clone());
    let mut fleet = Fleet::new(res.clone(), Arc::new(SimulatedBackend));
    let mut log = EventLog::default();

    let models = [("inference", "llama-3.2-1b"), ("inference", "llama-3.2-3b"), ("inference", "llama-3.1-8b"), ("eval", "llama-3.1-8b"), ("sft", "llama-3.2-1b")];
    let classes = [ResourceClass::Rtx4090_24g, ResourceClass::Rtx4090_48g, ResourceClass::H100_94g];
    let n_sigs = rng.random_range(1..=2);
    let sig_specs: Vec<serde_json::Value> = (0..n_sigs)
        .map(|i| {
            let (kind, model) = models[rng.random_range(0..models.len())];
            let class = ["class_4090_24g", "class_4090_48g", "class_h100_94g"][rng.random_range(0..3)];
            let mut params = json!({"variant": i});
            if rng.random_bool(0.3) {
                params["mem_gb"] = json!(rng.random_range(2..40));
            }
            json!({"op_kind": kind, "model_ref": model, "resource_class": class, "params": params})
        })
        .collect();

    let mut workers = vec![];
    for _ in 0..rng.random_range(1..=4) {
        let class = classes[rng.random_range(0..3)];
        let id = fleet.provision(&ClassProfile::reference(class), 0.0, Visibility::Shared);
        cp.on_worker_ready(&id, 0.0, &mut fleet, &mut log).unwrap();
        workers.push((id, class));
    }

    let mut tasks: Vec<OracleTask> = vec![];
    let mut seq = 0usize;
    let mut submit = |cp: &mut ControlPlane, fleet: &Fleet, log: &mut EventLog, rng: &mut ChaCha8Rng, tasks: &mut Vec<OracleTask>, count: usize| {
        for _ in 0..count {
            let s = rng.random_range(0..sig_specs.len());
            let input = cas.put(format!("in-{seed}-{seq}").as_bytes()).unwrap();
            let mut node = sig_specs[s].clone();
            node["inputs"] = json!([{"slot": 0, "external_hash": input.to_hex()}]);
            let wf = format!("wf{seq}");
            let dag = compile_workflow_value(&json!({"workflow_id": wf, "tenant_id": "t", "nodes": {"op": node}})).unwrap();
            let spec = dag.nodes["op"].clone();
            cp.submit_workflow(dag, log.records().last().map_or(0.0, |r| r.t), fleet, log).unwrap();
            let id = cp.groups().find(|g| g.origin.0 == wf).map(|g| g.id);
            if let Some(id) = id {
                tasks.push(OracleTask { id, seq, sig: spec.exec_signature().unwrap(), spec, input });
            }
            seq += 1;
        }
    };

    // Warm some workers so the locality term is exercised.
    let mut warm_inputs = vec![];
    for (id, _) in &workers {
        if rng.random_bool(0.5) {
            let mut spec_doc = sig_specs[rng.random_range(0..sig_specs.len())].clone();
            let input = cas.put(format!("warm-{id}").as_bytes()).unwrap();
            warm_inputs.push(input);
            spec_doc["inputs"] = json!([{"slot": 0, "external_hash": input.to_hex()}]);
            let spec = compile_workflow_value(&json!({"workflow_id": "warm", "tenant_id": "t", "nodes": {"op": spec_doc}})).unwrap().nodes["op"].clone();
            let w = fleet.get_mut(id).unwrap();
            let batch = AdmittedBatch {
                batch_id: 0,
                signature: spec.exec_signature().unwrap(),
                declared_footprint: 0,
                max_batch: 24,
                items: vec![BatchItem { task: u64::MAX, identity: spec.task_identity(&[input]).unwrap(), inputs: vec![input], replica: false }],
                dispatched_at: 0.0,
                spec,
            };
            let _ = w.execute_batch(batch, 0.0, &cas);
        }
    }

    let mut oracle = Oracle { res: ResourceModel::default(), mem: MemoryModel::default(), weights, depth: 2, overrides: BTreeMap::new() };
    let mut decisions = 0;
    let mut misfits = 0;
    let mut now = 0.0;
    for round in 0..3 {
        let count = rng.random_range(1..=60);
        submit(&mut cp, &fleet, &mut log, &mut rng, &mut tasks, count);
        let mut ow: Vec<OracleWorker> = workers
            .iter()
            .map(|(id, class)| {
                let w = fleet.get(id).unwrap();
                let mut artifacts: BTreeSet<ContentHash> = tasks.iter().map(|t| t.input).chain(warm_inputs.iter().copied()).filter(|h| w.cache.has_artifact(h)).collect();
                for t in &tasks {
                    if w.cache.has_artifact(&t.spec.model_hash()) {
                        artifacts.insert(t.spec.model_hash());
                    }
                }
                OracleWorker {
                    id: id.clone(),
                    class: *class,
                    rate: ClassProfile::reference(*class).cost_rate,
                    depth: w.queue_depth(),
                    resident: tasks.iter().map(|t| t.sig).filter(|s| w.cache.is_resident(s)).collect(),
                    artifacts,
                }
            })
            .collect();
        let mut ready: Vec<&OracleTask> = tasks.iter().filter(|t| cp.group(t.id).is_some_and(|g| g.state == GroupState::Ready)).collect();
        ready.sort_by_key(|t| t.seq);
        oracle.overrides = ready.iter().filter_map(|t| Some((t.sig, cp.misfit_override(&t.sig)?))).collect();
        let expected = oracle.step(&mut ow, ready);
        let got: Vec<Pick> = cp
            .schedule_step(now, &mut fleet, &mut log)
            .into_iter()
            .map(|d| Pick { worker: d.worker_id, tasks: d.batch, utility: d.utility })
            .collect();
        let same = got.len() == expected.len()
            && got.iter().zip(&expected).all(|(a, b)| a.worker == b.worker && a.tasks == b.tasks && (a.utility - b.utility).abs() <= 1e-12);
        if !same {
            return Err(format!("seed {seed} round {round}: scheduler {got:?} vs oracle {expected:?}"));
        }
        decisions += got.len();
        // Run everything admitted so the next round sees freed slots and warm caches.
        for (id, _) in &workers {
            loop {
                let Some(started) = fleet.get_mut(id).unwrap().start_next(now, &cas) else { break };
                let started = started.map_err(|(_, e)| e.to_string())?;
                let w = fleet.get_mut(id).unwrap();
                match w.begin_exec(started.exec_at) {
                    Ok(_) => {
                        let result = w.finish(started.done_at, &cas).map_err(|e| e.to_string())?;
                        now = started.done_at;
                        cp.on_completion(id, &result, now, &fleet, &mut log).map_err(|e| e.to_string())?;
                    }
                    Err((batch, WorkerError::ResourceShortage { shortfall, required })) => {
                        now = started.exec_at;
                        misfits += 1;
                        let _ = cp.handle_resource_misfit(id, &batch, shortfall, required, now, &fleet, &mut log);
                    }
                    Err((_, e)) => return Err(e.to_string()),
                }
            }
        }
    }
    Ok((decisions, misfits))
}

fn scheduler_oracle() -> Outcome {
    let (mut decisions, mut misfits) = (0, 0);
    for seed in 0..50 {
        let (d, m) = oracle_instance(seed)?;
        decisions += d;
        misfits += m;
    }
    Ok(format!("50 instances, {decisions} decisions, {misfits} misfits corrected between rounds, every sequence matches the brute-force argmax"))
}

// ---------------------------------------------------------------- 3

fn dispatch_trace(out: &RunOutput) -> Vec<(String, ExecSignature, Vec<u64>)> {
    out.log
        .iter()
        .filter_map(|r| match &r.event {
            Event::Dispatch { worker, signature, tasks, .. } => Some((worker.clone(), *signature, tasks.clone())),
            _ => None,
        })
        .collect()
}

fn weight_scaling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut total = 0;
    for i in 0..20 {
        let w = random_weights(&mut rng);
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let group = if i % 3 == 2 { "B" } else { "A" };
        let base: ScenarioConfig = serde_json::from_value(json!({
            "name": format!("scale-{i}"), "seed": i, "duration_s": 900,
            "workload": {"kind": "generated", "group": group, "count": 25,
                         "arrival": {"kind": "exp_decay", "start_qpm": 8.0, "end_qpm": 1.0, "over_s": 600},
                         "shared_prefix_prob": 0.5, "tenants": 3}
        }))
        .unwrap();
        let a = run(&ScenarioConfig { weights: WeightsSpec::Explicit(w), ..base.clone() });
        let b = run(&ScenarioConfig { weights: WeightsSpec::Explicit(w.scaled(c)), ..base });
        let (ta, tb) = (dispatch_trace(&a), dispatch_trace(&b));
        if ta != tb {
            return Err(format!("scenario {i}: decisions differ under scale {c}"));
        }
        total += ta.len();
    }
    Ok(format!("20 scenarios, {total} decisions identical under random scaling"))
}

// ---------------------------------------------------------------- 4

fn at_most_once() -> Outcome {
    let base = load("chaos_small");
    let (mut publishes, mut discards, mut specs) = (0, 0, 0);
    for seed in 0..100 {
        let out = run(&ScenarioConfig { seed, ..base.clone() });
        let mut won: BTreeMap<_, usize> = BTreeMap::new();
        for r in out.log.iter() {
            if let Event::Publish { identity, outcome, .. } = &r.event {
                publishes += 1;
                match outcome {
                    PublishOutcome::Won => *won.entry(*identity).or_default() += 1,
                    PublishOutcome::DuplicateDiscarded => discards += 1,
                }
            }
        }
        if let Some((id, n)) = won.iter().find(|(_, n)| **n != 1) {
            return Err(format!("seed {seed}: identity {} published {n} times", id.short()));
        }
        let r = &out.report;
        let expected_ops: usize = r.tasks.iter().map(|t| t.operators).sum();
        if r.workflows_completed != r.workflows_submitted || r.operator_completions != expected_ops {
            return Err(format!("seed {seed}: {}/{} workflows, {}/{expected_ops} operators", r.workflows_completed, r.workflows_submitted, r.operator_completions));
        }
        specs += r.speculations;
    }
    Ok(format!("100 seeds, {publishes} publishes ({discards} discarded duplicates, {specs} replicas), no identity won twice, no operator lost"))
}

// ---------------------------------------------------------------- 5, 6

fn watchdog_timing() -> Outcome {
    let r = run(&load("crash_h100")).report;
    let f = r.failures.iter().find(|f| f.kind == "crash");
    let d = f.and_then(|f| f.detected_at);
    check(f.is_some_and(|f| f.injected_at == 120.0) && d.is_some_and(|d| (150.0..=151.0).contains(&d)), format!("crash at 120 s detected at {d:?}"))
}

fn crash_recovery() -> Outcome {
    let base = run(&load("reference_group_a")).report;
    let crash = run(&load("crash_h100")).report;
    let (a, b) = (base.avg_latency_s.unwrap(), crash.avg_latency_s.unwrap());
    let rise = b / a - 1.0;
    check(
        crash.workflows_completed == crash.workflows_submitted && rise > 0.0 && rise < 0.5,
        format!("{}/{} completed, avg latency {a:.3}s -> {b:.3}s (+{:.1}%)", crash.workflows_completed, crash.workflows_submitted, 100.0 * rise),
    )
}

// ---------------------------------------------------------------- 7

fn misfit_recovery() -> Outcome {
    let out = run(&load("misfit_8b"));
    let r = &out.report;
    let recs = out.log.records();
    let misfit = recs.iter().find(|r| matches!(r.event, Event::Misfit { .. }));
    let Some(m) = misfit else { return Err("no misfit reported".into()) };
    let Event::Misfit { worker: bad, .. } = &m.event else { unreachable!() };
    let mut retry_worker = BTreeMap::new();
    for rec in recs {
        if let Event::Dispatch { worker, batch_id, .. } = &rec.event {
            retry_worker.insert(*batch_id, worker.clone());
        }
    }
    let retry = recs.iter().find(|rec| {
        rec.seq > m.seq && matches!(&rec.event, Event::BatchDone { batch_id, worker, .. } if worker != bad && retry_worker.get(batch_id) == Some(worker))
    });
    check(
        r.workflows_completed == r.workflows_submitted && retry.is_some(),
        format!(
            "misfit on {bad} at seq {}, first successful retry at seq {:?}, {}/{} completed",
            m.seq,
            retry.map(|r| r.seq),
            r.workflows_completed,
            r.workflows_submitted
        ),
    )
}

// ---------------------------------------------------------------- 8

fn cdp_edp_arithmetic() -> Outcome {
    let mut log = EventLog::default();
    log.record(0.0, Event::RunStart { scenario: "hand".into(), policy: "flowmesh".into(), seed: 0 });
    log.record(0.0, Event::WorkerProvisioned {
        worker: "w000".into(),
        class: ResourceClass::Rtx4090_24g,
        cost_rate: 0.35,
        idle_power_w: 25.0,
        peak_power_w: 450.0,
        ready_at: 0.0,
    });
    log.record(0.0, Event::Power { worker: "w000".into(), watts: 25.0 });
    log.record(0.0, Event::WorkerReady { worker: "w000".into() });
    for (i, at) in [0.0, 2.0, 5.0].into_iter().enumerate() {
        log.record(at, Event::WorkflowSubmitted { workflow_id: format!("t{i}"), tenant_id: "a".into(), operators: 1 });
    }
    log.record(5.0, Event::Power { worker: "w000".into(), watts: 300.0 });
    log.record(12.5, Event::Power { worker: "w000".into(), watts: 25.0 });
    log.record(12.5, Event::WorkflowCompleted { workflow_id: "t0".into() });
    log.record(12.5, Event::WorkflowCompleted { workflow_id: "t1".into() });
    log.record(20.0, Event::WorkflowCompleted { workflow_id: "t2".into() });
    log.record(30.0, Event::RunEnd);
    let r: MetricsReport = compute_metrics(log.records()).unwrap();

    // Spreadsheet: power 25 W on [0,5), 300 W on [5,12.5), 25 W on [12.5,30].
    let cost = 0.35 * (30.0 - 0.0) / 3600.0;
    let energy = 25.0 * 5.0 + 300.0 * 7.5 + 25.0 * 17.5;
    let avg = ((12.5 - 0.0) + (12.5 - 2.0) + (20.0 - 5.0)) / 3.0;
    let cdp = (cost / 3.0) * avg;
    let edp = (energy / 3.0) * avg;
    let ok = r.total_cost == cost && r.total_energy_j == energy && r.avg_latency_s == Some(avg) && r.cdp == Some(cdp) && r.edp == Some(edp);
    check(ok, format!("cost {} energy {} avg {:?} cdp {:?} (oracle {cdp}) edp {:?} (oracle {edp})", r.total_cost, r.total_energy_j, r.avg_latency_s, r.cdp, r.edp))
}

// ---------------------------------------------------------------- 9, 10

struct Reference {
    flowmesh: MetricsReport,
    baselines: Vec<MetricsReport>,
    slowest_s: f64,
}

fn reference() -> Reference {
    let base = load("reference_group_a");
    let mut slowest: f64 = 0.0;
    let mut timed = |cfg: ScenarioConfig| {
        let t = Instant::now();
        let r = run(&cfg).report;
        slowest = slowest.max(t.elapsed().as_secs_f64());
        r
    };
    let flowmesh = timed(base.clone());
    let baselines = [Policy::MfFirstFit, Policy::DsStatic, Policy::DrRoundRobin].into_iter().map(|policy| timed(ScenarioConfig { policy, ..base.clone() })).collect();
    Reference { flowmesh, baselines, slowest_s: slowest }
}

fn cost_advantage(reference: &Reference) -> Outcome {
    let fm = &reference.flowmesh;
    let mut ok = reference.slowest_s < 60.0;
    let mut parts = vec![];
    for b in &reference.baselines {
        let (c, e) = (b.total_cost / fm.total_cost, b.total_energy_j / fm.total_energy_j);
        ok &= c >= 1.2 && e >= 1.1;
        parts.push(format!("{} cost {c:.2}x energy {e:.2}x", b.policy));
    }
    check(ok, format!("{}; slowest run {:.2}s", parts.join(", "), reference.slowest_s))
}

fn ablations(reference: &Reference) -> Outcome {
    let base = load("reference_group_a");
    let fm = &reference.flowmesh;
    let on = Ablation::default();
    let off = |ablation| run(&ScenarioConfig { ablation, ..base.clone() }).report;
    let no_cons = off(Ablation { consolidation: false, ..on });
    let no_elastic = off(Ablation { elasticity: false, ..on });
    let no_mo = off(Ablation { multi_objective: false, ..on });
    let lat = |r: &MetricsReport| r.avg_latency_s.unwrap();
    let ok = lat(&no_cons) > lat(fm) && no_cons.total_cost > fm.total_cost && no_elastic.total_cost > fm.total_cost && lat(&no_mo) > lat(fm);
    check(
        ok,
        format!(
            "consolidation off latency {:.2}x cost {:.2}x; elasticity off cost {:.2}x; round-robin latency {:.2}x",
            lat(&no_cons) / lat(fm),
            no_cons.total_cost / fm.total_cost,
            no_elastic.total_cost / fm.total_cost,
            lat(&no_mo) / lat(fm)
        ),
    )
}

// ---------------------------------------------------------------- 11

fn elasticity_shape() -> Outcome {
    let cfg = load("elastic_burst");
    let out = run(&cfg);
    let r = &out.report;
    let initial: usize = cfg.fleet.iter().map(|c| c.initial).sum();
    let bound: usize = cfg.fleet.iter().map(|c| c.max_count).sum();
    let warmup = cfg.tuning.autoscale.warmup_s;
    let idle_timeout = cfg.tuning.autoscale.idle_timeout_s;
    let series = &r.active_workers;
    let within = series.iter().all(|(_, n)| *n >= 1 && *n <= bound);
    let peak_at = series.iter().max_by_key(|(t, n)| (*n, Reverse(t.to_bits()))).map(|p| p.0).unwrap();
    let rises = r.peak_active_workers > initial;
    let decays = series.last().unwrap().1 < r.peak_active_workers;

    let mut ready_at = BTreeMap::new();
    let mut lag_ok = true;
    let mut retire_ok = true;
    let mut scale_up_at = None;
    for rec in out.log.iter() {
        match &rec.event {
            Event::ScaleUp { .. } => scale_up_at = Some(rec.t),
            Event::WorkerProvisioned { worker, ready_at: ready, .. } if rec.t > 0.0 => {
                lag_ok &= scale_up_at == Some(rec.t) && *ready == rec.t + warmup;
                ready_at.insert(worker.clone(), *ready);
            }
            Event::WorkerReady { worker } => {
                if let Some(at) = ready_at.get(worker) {
                    lag_ok &= rec.t == *at;
                }
            }
            Event::WorkerRetired { idle_since, .. } => retire_ok &= rec.t - idle_since >= idle_timeout,
            _ => {}
        }
    }
    check(
        within && rises && decays && lag_ok && retire_ok && r.scale_ups > 0 && r.retirements > 0,
        format!(
            "{initial} -> peak {} at {peak_at}s -> {} (bound {bound}); {} scale-ups each ready {warmup}s later: {lag_ok}; {} retirements after >= {idle_timeout}s idle: {retire_ok}",
            r.peak_active_workers,
            series.last().unwrap().1,
            r.scale_ups,
            r.retirements
        ),
    )
}

// ---------------------------------------------------------------- 12

fn determinism() -> Outcome {
    let names = ["reference_group_a", "reference_group_b", "crash_h100", "dedup_sft_prefix", "misfit_8b", "elastic_burst", "chaos_small"];
    for name in names {
        let cfg = load(name);
        let (a, b) = (run(&cfg), run(&cfg));
        if a.report.to_json() != b.report.to_json() || a.log.to_ndjson() != b.log.to_ndjson() {
            return Err(format!("{name} differs between runs"));
        }
    }
    Ok(format!("{} scenarios byte-identical across repeated runs", names.len()))
}

// ---------------------------------------------------------------- 13

fn batch_sublinearity() -> Outcome {
    let cas = CasStore::in_memory();
    let res = Arc::new(ResourceModel::default());
    let spec = compile_workflow_value(&json!({"workflow_id": "w", "tenant_id": "t", "nodes": {
        "op": {"op_kind": "inference", "model_ref": "llama-3.1-8b", "resource_class": "class_4090_24g", "params": {"max_tokens": 256}}}}))
    .unwrap()
    .nodes["op"]
    .clone();
    let inputs: Vec<ContentHash> = (0..24u8).map(|i| cas.put(&[i]).unwrap()).collect();
    let batch = |hs: &[ContentHash], id: u64| AdmittedBatch {
        batch_id: id,
        signature: spec.exec_signature().unwrap(),
        spec: spec.clone(),
        declared_footprint: 0,
        max_batch: 24,
        items: hs
            .iter()
            .enumerate()
            .map(|(i, h)| BatchItem { task: i as u64, identity: spec.task_identity(&[*h]).unwrap(), inputs: vec![*h], replica: false })
            .collect(),
        dispatched_at: 0.0,
    };
    let class = ResourceClass::Rtx4090_48g;
    let mut w = Worker::new(WorkerDescriptor::new("w000".into(), &ClassProfile::reference(class), 0.0, Visibility::Shared), res.clone(), Arc::new(SimulatedBackend));
    w.mark_ready(0.0);
    let (s, _) = w.execute_batch(batch(&inputs, 0), 0.0, &cas).unwrap();
    let mut now = s.done_at;
    let (big, _) = w.execute_batch(batch(&inputs, 1), now, &cas).unwrap();
    now = big.done_at;
    let mut singles = 0.0;
    for (i, h) in inputs.iter().enumerate() {
        let (s, _) = w.execute_batch(batch(std::slice::from_ref(h), 2 + i as u64), now, &cas).unwrap();
        singles += s.exec_s;
        now = s.done_at;
    }
    let e = res.perf.get(OperatorKind::Inference, "llama-3.1-8b", class).unwrap();
    let closed = (e.base_latency_s + e.per_item_latency_s * 24f64.powf(e.alpha)) / (24.0 * (e.base_latency_s + e.per_item_latency_s));
    let ratio = big.exec_s / singles;
    check(big.exec_s < singles && (ratio - closed).abs() <= 1e-9, format!("batch {:.4}s vs singletons {singles:.4}s, ratio {ratio:.12} closed form {closed:.12}", big.exec_s))
}

#[test]
fn acceptance_criteria() {
    let reference = reference();
    let results: Vec<(&str, Outcome)> = vec![
        ("1 dedup exactness", dedup_exactness()),
        ("2 scheduler oracle equivalence", scheduler_oracle()),
        ("3 weight-scaling argmax invariance", weight_scaling()),
        ("4 at-most-once publication", at_most_once()),
        ("5 watchdog timing", watchdog_timing()),
        ("6 crash-recovery completion", crash_recovery()),
        ("7 resource-misfit recovery", misfit_recovery()),
        ("8 CDP/EDP arithmetic", cdp_edp_arithmetic()),
        ("9 directional cost advantage", cost_advantage(&reference)),
        ("10 ablation directionality", ablations(&reference)),
        ("11 elasticity shape", elasticity_shape()),
        ("12 determinism", determinism()),
        ("13 batch sub-linearity", batch_sublinearity()),
    ];
    let mut failed = vec![];
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
