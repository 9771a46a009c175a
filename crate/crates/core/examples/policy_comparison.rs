//! Reference workload under every policy and each ablation, as ratios
//! against the full system.

use flowmesh::control::{Ablation, Policy};
use flowmesh::sim::{run_scenario, MetricsReport, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/reference_group_a.json");
    let base = ScenarioConfig::from_json(&std::fs::read_to_string(path)?)?;
    let run = |cfg: ScenarioConfig| -> Result<MetricsReport, Box<dyn std::error::Error>> { Ok(run_scenario(&cfg)?.report) };

    let full = run(base.clone())?;
    let mut rows = Vec::new();
    for policy in Policy::ALL.into_iter().filter(|p| p.is_baseline()) {
        rows.push((policy.to_string(), run(ScenarioConfig { policy, ..base.clone() })?));
    }
    let on = Ablation::default();
    for (name, ablation) in [
        ("no consolidation", Ablation { consolidation: false, ..on }),
        ("no elasticity", Ablation { elasticity: false, ..on }),
        ("round-robin placement", Ablation { multi_objective: false, ..on }),
    ] {
        rows.push((name.to_string(), run(ScenarioConfig { ablation, ..base.clone() })?));
    }

    let lat = |r: &MetricsReport| r.avg_latency_s.unwrap_or(f64::NAN);
    println!("flowmesh: cost ${:.3}, energy {:.0} J, latency {:.2}s", full.total_cost, full.total_energy_j, lat(&full));
    println!("{:<24} {:>8} {:>8} {:>8} {:>8}", "ratio vs flowmesh", "cost", "energy", "latency", "cdp");
    for (name, r) in rows {
        println!(
            "{name:<24} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            r.total_cost / full.total_cost,
            r.total_energy_j / full.total_energy_j,
            lat(&r) / lat(&full),
            r.cdp.unwrap_or(f64::NAN) / full.cdp.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
