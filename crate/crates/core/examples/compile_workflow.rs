//! Compile a workflow document into a DAG and walk its ready frontier.

use std::collections::BTreeSet;

use flowmesh::workflow::{compile_workflow, WorkflowError};

const DOC: &str = r#"{
  "workflow_id": "rag-answer",
  "tenant_id": "acme",
  "nodes": {
    "retrieve": {"op_kind": "tool_call", "model_ref": "retriever", "resource_class": "class_4090_24g",
                 "inputs": [{"slot": 0, "external_hash": "$query"}]},
    "rerank":   {"op_kind": "inference", "model_ref": "llama-3.2-1b", "resource_class": "class_4090_24g",
                 "params": {"max_tokens": 64, "temperature": 0.0},
                 "inputs": [{"slot": 0, "from": "retrieve"}]},
    "answer":   {"op_kind": "inference", "model_ref": "llama-3.1-8b", "resource_class": "class_4090_24g",
                 "params": {"max_tokens": 512, "temperature": 0.7},
                 "inputs": [{"slot": 0, "from": "rerank"}, {"slot": 1, "from": "retrieve"}]}
  }
}"#;

fn main() -> Result<(), WorkflowError> {
    let doc = DOC.replace("$query", &flowmesh::digest::ContentHash::of(b"what is a CAS?").to_hex());
    let dag = compile_workflow(&doc)?;
    println!("{} ({}): {} nodes, {} edges", dag.workflow_id, dag.tenant_id, dag.node_count(), dag.edge_count());
    println!("topological order: {:?}", dag.topological_order());

    let mut done = BTreeSet::new();
    loop {
        let frontier = dag.ready_frontier(&done);
        if frontier.is_empty() {
            break;
        }
        println!("ready: {frontier:?}");
        done.extend(frontier);
    }

    let cyclic = r#"{"workflow_id": "loop", "tenant_id": "t", "nodes": {
      "a": {"op_kind": "inference", "model_ref": "m", "resource_class": "class_4090_24g", "inputs": [{"slot": 0, "from": "b"}]},
      "b": {"op_kind": "inference", "model_ref": "m", "resource_class": "class_4090_24g", "inputs": [{"slot": 0, "from": "a"}]}}}"#;
    println!("cyclic document: {}", compile_workflow(cyclic).unwrap_err());
    Ok(())
}
