//! A request burst that decays: watch the fleet grow after warm-up and
//! shrink once workers sit idle.

use flowmesh::sim::{run_scenario, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/elastic_burst.json");
    let cfg = ScenarioConfig::from_json(&std::fs::read_to_string(path)?)?;
    let r = run_scenario(&cfg)?.report;
    println!("{} workflows, {} scale-ups, {} retirements, peak {} workers", r.workflows_completed, r.scale_ups, r.retirements, r.peak_active_workers);
    for (t, n) in &r.active_workers {
        println!("{t:>8.1}s {n:>2} {}", "#".repeat(*n));
    }
    println!("cost ${:.3}, avg latency {:.1}s", r.total_cost, r.avg_latency_s.unwrap_or(f64::NAN));
    Ok(())
}
