//! Crash an H100 two minutes in and compare against the undisturbed run.

use flowmesh::sim::{run_scenario, ScenarioConfig};

fn load(name: &str) -> Result<ScenarioConfig, Box<dyn std::error::Error>> {
    let path = format!("{}/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    Ok(ScenarioConfig::from_json(&std::fs::read_to_string(path)?)?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = run_scenario(&load("reference_group_a")?)?.report;
    let crash = run_scenario(&load("crash_h100")?)?.report;
    for f in &crash.failures {
        println!("{} {} at {}s, detected at {:?}", f.worker, f.kind, f.injected_at, f.detected_at);
    }
    let (a, b) = (base.avg_latency_s.unwrap(), crash.avg_latency_s.unwrap());
    println!("completed {}/{} vs {}/{}", crash.workflows_completed, crash.workflows_submitted, base.workflows_completed, base.workflows_submitted);
    println!("avg latency {a:.2}s -> {b:.2}s ({:+.1}%)", 100.0 * (b / a - 1.0));
    println!("speculative replicas {}, discarded duplicates {}", crash.speculations, crash.discarded_duplicates);
    Ok(())
}
