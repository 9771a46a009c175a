use serde_json::json;

use super::*;
use crate::events::Event;

fn scenario(doc: serde_json::Value) -> ScenarioConfig {
    serde_json::from_value(doc).expect("scenario")
}

fn one_worker(class: &str) -> serde_json::Value {
    json!([{ "class": class, "initial": 1, "max_count": 1 }])
}

fn chat(at_s: f64, copies: usize, spacing_s: f64) -> serde_json::Value {
    json!({
        "at_s": at_s, "copies": copies, "spacing_s": spacing_s,
        "document": {"workflow_id": "chat", "tenant_id": "t0", "nodes": {
            "a": {"op_kind": "inference", "model_ref": "llama-3.2-1b", "resource_class": "class_4090_24g",
                  "params": {"max_tokens": 64}, "inputs": [{"slot": 0, "external_hash": "$input"}]}}}
    })
}

fn small_group_a(seed: u64) -> ScenarioConfig {
    scenario(json!({
        "seed": seed, "duration_s": 300,
        "workload": {"kind": "generated", "group": "A", "count": 12,
                     "arrival": {"kind": "constant", "qpm": 6.0}},
        "failures": [{"worker": "w001", "at_s": 50, "kind": "crash"}],
        "check_invariants": true
    }))
}

#[test]
fn equal_config_and_seed_give_identical_outputs() {
    let a = run_scenario(&small_group_a(3)).unwrap();
    let b = run_scenario(&small_group_a(3)).unwrap();
    assert_eq!(a.report.to_json(), b.report.to_json());
    assert_eq!(a.log.to_ndjson(), b.log.to_ndjson());
    let c = run_scenario(&small_group_a(4)).unwrap();
    assert_ne!(a.log.to_ndjson(), c.log.to_ndjson());
}

#[test]
fn idle_fleet_pays_only_its_floor() {
    let cfg = scenario(json!({"duration_s": 120, "fleet": one_worker("class_4090_24g")}));
    let out = run_scenario(&cfg).unwrap();
    let r = &out.report;
    assert_eq!(r.run_end_s, 120.0);
    assert_eq!(r.workflows_submitted, 0);
    assert!((r.total_cost - 0.35 * 120.0 / 3600.0).abs() < 1e-12);
    assert!((r.total_energy_j - 25.0 * 120.0).abs() < 1e-9);
    assert_eq!(r.avg_latency_s, None);
    assert_eq!(r.cdp, None);
}

#[test]
fn log_derived_totals_match_worker_accounting() {
    let out = run_scenario(&small_group_a(5)).unwrap();
    assert_eq!(out.report.workers.len(), out.worker_totals.len());
    for w in &out.report.workers {
        let (cost, energy) = out.worker_totals[&w.worker];
        assert!((w.cost - cost).abs() <= 1e-9 * cost.max(1.0), "{} cost {} vs {}", w.worker, w.cost, cost);
        assert!((w.energy_j - energy).abs() <= 1e-6 * energy.max(1.0), "{} energy {} vs {}", w.worker, w.energy_j, energy);
    }
    let total: f64 = out.worker_totals.values().map(|v| v.0).sum();
    assert!((out.report.total_cost - total).abs() < 1e-9);
}

#[test]
fn metrics_recompute_from_serialized_log() {
    let out = run_scenario(&small_group_a(6)).unwrap();
    let again = metrics_from_ndjson(&out.log.to_ndjson()).unwrap();
    assert_eq!(again.to_json(), out.report.to_json());
}

#[test]
fn truncated_log_is_rejected() {
    let out = run_scenario(&small_group_a(6)).unwrap();
    let text = out.log.to_ndjson();
    let cut: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
    assert!(matches!(metrics_from_ndjson(&cut), Err(MetricsError::TruncatedLog(_))));
    assert!(matches!(metrics_from_ndjson(""), Err(MetricsError::TruncatedLog(_))));
}

#[test]
fn crash_is_detected_one_watchdog_period_later() {
    let cfg = scenario(json!({
        "duration_s": 400, "weights": "performance_first",
        "fleet": [{"class": "class_4090_24g", "initial": 1, "max_count": 1},
                  {"class": "class_h100_94g", "initial": 1, "max_count": 1}],
        "workload": {"kind": "explicit", "workflows": [chat(0.0, 40, 5.0)]},
        "failures": [{"worker": "class:class_h100_94g", "at_s": 120, "kind": "crash"}]
    }));
    let r = run_scenario(&cfg).unwrap().report;
    assert_eq!(r.failures.len(), 1);
    let d = r.failures[0].detected_at.unwrap();
    assert!((150.0..=151.0).contains(&d), "detected at {d}");
    assert_eq!(r.workflows_completed, 40);
}

#[test]
fn silent_hang_is_covered_by_speculation() {
    let cfg = scenario(json!({
        "duration_s": 300,
        "fleet": [{"class": "class_4090_24g", "initial": 2, "max_count": 2}],
        "tuning": {"autoscale": {"min_workers": 2}},
        "workload": {"kind": "explicit", "workflows": [chat(0.0, 6, 20.0)]},
        "failures": [{"worker": "w000", "at_s": 1, "kind": "silent_hang"}],
        "check_invariants": true
    }));
    let out = run_scenario(&cfg).unwrap();
    assert_eq!(out.report.workflows_completed, 6);
    assert!(out.report.speculations >= 1);
    assert!(out.report.failures[0].detected_at.is_none());
}

#[test]
fn round_robin_baseline_cycles_workers() {
    let cfg = scenario(json!({
        "duration_s": 120, "policy": "dr_round_robin",
        "fleet": [{"class": "class_4090_24g", "initial": 3, "max_count": 3}],
        "workload": {"kind": "explicit", "workflows": [chat(0.0, 6, 30.0)]}
    }));
    let out = run_scenario(&cfg).unwrap();
    let order: Vec<String> = out
        .log
        .records()
        .iter()
        .filter_map(|r| match &r.event {
            Event::Dispatch { worker, .. } => Some(worker.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(order, ["w000", "w001", "w002", "w000", "w001", "w002"]);
}

#[test]
fn unknown_selector_fails_at_injection() {
    let cfg = scenario(json!({
        "duration_s": 100, "fleet": one_worker("class_4090_24g"),
        "workload": {"kind": "explicit", "workflows": [chat(0.0, 1, 0.0)]},
        "failures": [{"worker": "w009", "at_s": 10, "kind": "crash"}]
    }));
    assert!(matches!(run_scenario(&cfg), Err(SimError::UnknownSelector(s)) if s == "w009"));
}

#[test]
fn overrides_reach_nested_fields() {
    let text = r#"{"duration_s": 10, "fleet": [{"class": "class_4090_24g", "initial": 1, "max_count": 1}]}"#;
    let cfg = ScenarioConfig::from_json_with_overrides(
        text,
        &["fleet.0.max_count=3".into(), "weights=cost_first".into(), "tuning.autoscale.warmup_s=5".into()],
    )
    .unwrap();
    assert_eq!(cfg.fleet[0].max_count, 3);
    assert_eq!(cfg.weights, WeightsSpec::Preset("cost_first".into()));
    assert_eq!(cfg.tuning.autoscale.warmup_s, 5.0);
    assert!(matches!(ScenarioConfig::from_json_with_overrides(text, &["nokey".into()]), Err(ConfigError::BadOverride(_))));
    assert!(ScenarioConfig::from_json_with_overrides(text, &["fleet.4.initial=1".into()]).is_err());
}

#[test]
fn invalid_scenarios_are_rejected() {
    for doc in [
        json!({"duration_s": 0}),
        json!({"duration_s": 10, "fleet": []}),
        json!({"duration_s": 10, "weights": "fastest"}),
        json!({"duration_s": 10, "failures": [{"worker": "gpu1", "at_s": 1, "kind": "crash"}]}),
        json!({"duration_s": 10, "failures": [{"worker": "w000", "at_s": 10, "kind": "crash"}]}),
        json!({"duration_s": 10, "workload": {"kind": "generated", "group": "A", "count": 0, "arrival": {"kind": "constant", "qpm": 1.0}}}),
    ] {
        let parsed: Result<ScenarioConfig, _> = serde_json::from_value(doc.clone());
        assert!(parsed.map_err(|e| e.to_string()).and_then(|c| c.validate().map_err(|e| e.to_string())).is_err(), "{doc}");
    }
    assert!(ScenarioConfig::from_json(r#"{"duration_s": 10, "bogus": 1}"#).is_err());
}
