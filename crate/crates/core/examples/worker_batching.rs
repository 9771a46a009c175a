//! Run the same 24 requests as one batch and as 24 singletons on a warm
//! worker, and compare time, energy and cost.

use std::sync::Arc;

use flowmesh::cas::CasStore;
use flowmesh::digest::ContentHash;
use flowmesh::worker::{AdmittedBatch, BatchItem, ClassProfile, ResourceModel, SimulatedBackend, Visibility, Worker, WorkerDescriptor, GIB};
use flowmesh::workflow::{compile_workflow_value, OperatorSpec};

fn batch(spec: &OperatorSpec, inputs: &[ContentHash], id: u64, now: f64) -> AdmittedBatch {
    let items = inputs
        .iter()
        .enumerate()
        .map(|(i, h)| BatchItem { task: i as u64, identity: spec.task_identity(&[*h]).unwrap(), inputs: vec![*h], replica: false })
        .collect();
    AdmittedBatch {
        batch_id: id,
        signature: spec.exec_signature().unwrap(),
        spec: spec.clone(),
        declared_footprint: 16 * GIB,
        max_batch: 24,
        items,
        dispatched_at: now,
    }
}

fn main() {
    let cas = CasStore::in_memory();
    let inputs: Vec<ContentHash> = (0..24u8).map(|i| cas.put(&[i]).unwrap()).collect();
    let dag = compile_workflow_value(&serde_json::json!({"workflow_id": "w", "tenant_id": "t", "nodes": {
        "chat": {"op_kind": "inference", "model_ref": "llama-3.1-8b", "resource_class": "class_4090_24g", "params": {"max_tokens": 256}}}}))
    .unwrap();
    let spec = dag.nodes["chat"].clone();
    let profile = ClassProfile::reference(flowmesh::workflow::ResourceClass::Rtx4090_48g);

    let fresh = || {
        let mut w = Worker::new(WorkerDescriptor::new("w000".into(), &profile, 0.0, Visibility::Shared), Arc::new(ResourceModel::default()), Arc::new(SimulatedBackend));
        w.mark_ready(0.0);
        // Warm the weights and the local cache so both runs start equal.
        let (s, _) = w.execute_batch(batch(&spec, &inputs, 0, 0.0), 0.0, &cas).unwrap();
        (w, s.done_at)
    };

    let (mut w, t0) = fresh();
    let e0 = w.energy_joules(t0);
    let (s, _) = w.execute_batch(batch(&spec, &inputs, 1, t0), t0, &cas).unwrap();
    let batched = (s.done_at - t0, w.energy_joules(s.done_at) - e0, w.cost(s.done_at) - w.cost(t0));

    let (mut w, t0) = fresh();
    let e0 = w.energy_joules(t0);
    let mut now = t0;
    for (i, h) in inputs.iter().enumerate() {
        let (s, _) = w.execute_batch(batch(&spec, std::slice::from_ref(h), 10 + i as u64, now), now, &cas).unwrap();
        now = s.done_at;
    }
    let single = (now - t0, w.energy_joules(now) - e0, w.cost(now) - w.cost(t0));

    println!("{:<14} {:>10} {:>12} {:>10}", "", "time (s)", "energy (J)", "cost ($)");
    println!("{:<14} {:>10.2} {:>12.1} {:>10.5}", "batch of 24", batched.0, batched.1, batched.2);
    println!("{:<14} {:>10.2} {:>12.1} {:>10.5}", "24 singletons", single.0, single.1, single.2);
    println!("speedup {:.2}x, energy saving {:.2}x", single.0 / batched.0, single.1 / batched.1);
}
