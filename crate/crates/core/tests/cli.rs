use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowmesh")).args(args).output().expect("spawn flowmesh")
}

fn scenario(name: &str) -> String {
    format!("{}/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_accepts_shipped_scenarios() {
    let o = bin(&["validate", &scenario("crash_h100")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "OK");
}

#[test]
fn validate_reports_location_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"duration_s\": 10,\n  \"seed\": \"x\"\n}\n").unwrap();
    let o = bin(&["validate", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json:3:"), "{}", stderr(&o));

    let o = bin(&["validate", &scenario("crash_h100"), "--set", "weights=fastest"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn run_writes_reports_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("one");
    let o = bin(&["run", &scenario("misfit_8b"), "--seed", "7", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["events.log", "report.csv", "report.json", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([7]));
    let leftovers: Vec<PathBuf> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|e| e == "tmp")).collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn seed_ranges_get_one_directory_each() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["run", &scenario("misfit_8b"), "--seed", "1..3", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for n in 1..=3 {
        assert!(dir.path().join(format!("seed-{n}/report.json")).is_file());
    }
    assert_eq!(bin(&["run", &scenario("misfit_8b"), "--seed", "3..1"]).status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = bin(&["run", &scenario("crash_h100"), "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["events.log", "report.csv", "report.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn compare_writes_tables_with_ratio_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["compare", &scenario("misfit_8b"), "--policies", "flowmesh,dr_round_robin", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["comparison.csv", "active_workers.csv", "latency_cdf.csv", "manifest.json", "flowmesh/report.json", "dr_round_robin/events.log"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("dr_round_robin/flowmesh,")), "{csv}");
    let cdf = fs::read_to_string(dir.path().join("latency_cdf.csv")).unwrap();
    assert_eq!(cdf.lines().next(), Some("policy,latency_s,fraction"));

    let o = bin(&["compare", &scenario("misfit_8b"), "--policies", "flowmesh,fastest", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_is_an_invalid_input() {
    let o = bin(&["run", "/nonexistent/scenario.json"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
