//! Publish outputs into a durable artifact store, lose a race, and replay
//! a workflow's lineage after reopening the store.

use flowmesh::cas::{ArtifactKind, CasStore, LineageEdge, EXECUTED_BY_CACHE};
use flowmesh::digest::ContentHash;
use flowmesh::workflow::{model_hash, task_identity, Params, ResourceClass};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let prompt_hash;
    {
        let cas = CasStore::open(dir.path())?;
        let prompt = cas.put(b"summarize the quarterly report")?;
        prompt_hash = prompt;
        let identity = task_identity(&model_hash("llama-3.1-8b"), &Params::new(), ResourceClass::Rtx4090_24g, &[prompt])?;

        let edge = |wf: &str, by: &str, out: ContentHash, at: f64| LineageEdge {
            workflow_id: wf.into(),
            operator_id: "summarize".into(),
            task_identity: identity,
            consumed: vec![prompt],
            produced: out,
            executed_by: by.into(),
            completed_at: at,
        };

        let first = cas.put_artifact(b"summary from w000", ArtifactKind::Generic)?;
        println!("w000 publishes: {:?}", cas.publish(identity, first, edge("wf-1", "w000", first, 12.0))?);
        let late = cas.put_artifact(b"summary from w003", ArtifactKind::Generic)?;
        println!("w003 publishes: {:?}", cas.publish(identity, late, edge("wf-1", "w003", late, 14.5))?);

        // A second workflow with the same operator is served from the store.
        let bound = cas.lookup_output(&identity).expect("bound");
        cas.record_edge(edge("wf-2", EXECUTED_BY_CACHE, bound, 30.0))?;
        println!("bound output: {}", bound.short());
    }

    let cas = CasStore::open(dir.path())?;
    println!("reopened: {} artifacts, {} bytes", cas.artifact_count(), cas.stored_bytes());
    assert!(cas.has(&prompt_hash));
    for wf in ["wf-1", "wf-2"] {
        for e in cas.replay(wf)? {
            println!("{wf}: {} <- {} by {} at {}s", e.operator_id, e.produced.short(), e.executed_by, e.completed_at);
        }
    }
    for d in cas.discards() {
        println!("discarded: {} from {}", d.output.short(), d.executed_by);
    }
    Ok(())
}
