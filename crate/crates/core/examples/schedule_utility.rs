//! Score (worker, batch) pairs under each weight preset and let the
//! scheduler pick.

use std::sync::Arc;

use flowmesh::cas::CasStore;
use flowmesh::control::{ControlConfig, ControlPlane, UtilityWeights};
use flowmesh::events::EventLog;
use flowmesh::worker::{ClassProfile, Fleet, ResourceModel, SimulatedBackend, Visibility};
use flowmesh::workflow::{compile_workflow_value, ResourceClass};

fn main() {
    let resources = Arc::new(ResourceModel::default());
    let cas = Arc::new(CasStore::in_memory());
    let mut log = EventLog::default();

    for (name, weights) in [
        ("balanced", UtilityWeights::default()),
        ("cost_first", UtilityWeights::cost_first()),
        ("performance_first", UtilityWeights::performance_first()),
    ] {
        let config = ControlConfig { weights, ..ControlConfig::default() };
        let mut cp = ControlPlane::new(config, resources.clone(), cas.clone());
        let mut fleet = Fleet::new(resources.clone(), Arc::new(SimulatedBackend));
        for class in [ResourceClass::Rtx4090_24g, ResourceClass::H100_94g] {
            let id = fleet.provision(&ClassProfile::reference(class), 0.0, Visibility::Shared);
            cp.on_worker_ready(&id, 0.0, &mut fleet, &mut log).unwrap();
        }
        for i in 0..12u8 {
            let input = cas.put(&[i]).unwrap();
            let dag = compile_workflow_value(&serde_json::json!({
                "workflow_id": format!("{name}-{i}"), "tenant_id": "t",
                "nodes": {"chat": {"op_kind": "inference", "model_ref": "llama-3.1-8b", "resource_class": "class_4090_24g",
                                   "params": {"max_tokens": 256}, "inputs": [{"slot": 0, "external_hash": input.to_hex()}]}}
            }))
            .unwrap();
            cp.submit_workflow(dag, 0.0, &fleet, &mut log).unwrap();
        }

        println!("{name} (w_t={}, w_c={}, w_l={})", weights.w_t, weights.w_c, weights.w_l);
        let (_, tasks) = cp.ready_pool().into_iter().next().unwrap();
        for worker in ["w000", "w001"] {
            for n in [1, 6, 12] {
                let t = cp.utility_terms(&fleet, &worker.to_string(), &tasks[..n]).unwrap();
                let u = t.score(&weights);
                println!("  {worker} {:<13} n={n:<2} T_eff={:.3} C={:.3} G_loc={:.2} U={u:+.3}", fleet.get(worker).unwrap().class().as_str(), t.t_eff, t.cost, t.locality);
            }
        }
        for d in cp.schedule_step(0.0, &mut fleet, &mut log) {
            println!("  -> dispatch {} items to {} (U={:+.3})", d.batch.len(), d.worker_id, d.utility);
        }
    }
}
