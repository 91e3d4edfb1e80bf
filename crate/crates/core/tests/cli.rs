use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rrft::experiments::{sha256_hex, Manifest};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rrft"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn manifest_indexes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ranks");
    let o = run(&["rank", data("three_component.json").to_str().unwrap(), "--out", out.to_str().unwrap(), "--format", "json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "rank");
    assert_eq!(manifest.files.len(), 1);
    let entry = &manifest.files[0];
    let bytes = std::fs::read(out.join(&entry.path)).unwrap();
    assert_eq!(entry.sha256, sha256_hex(&bytes));
    assert_eq!(entry.bytes, bytes.len());
}

#[test]
fn plan_then_place() {
    let tmp = tempfile::tempdir().unwrap();
    let plan_dir = tmp.path().join("plan");
    let o = run(&["plan", data("three_component.json").to_str().unwrap(), "--out", plan_dir.to_str().unwrap()]);
    assert!(o.status.success());
    let plan: rrft::ReplicaPlan = serde_json::from_str(&std::fs::read_to_string(plan_dir.join("plan.json")).unwrap()).unwrap();
    let backups: Vec<u32> = plan.components.iter().map(|c| c.backups).collect();
    assert_eq!(backups, vec![2, 1, 1]);

    let place_dir = tmp.path().join("place");
    let o = run(&["place", plan_dir.join("plan.json").to_str().unwrap(), "--out", place_dir.to_str().unwrap()]);
    assert!(o.status.success());
    let map: rrft::PlacementMap = serde_json::from_str(&std::fs::read_to_string(place_dir.join("placement.json")).unwrap()).unwrap();
    assert_eq!(map.len(), 7);
    assert!(rrft::audit_rules(&map, &[plan]).is_empty());
    assert!(place_dir.join("placement.csv").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();

    let cyclic = r#"{"app_id": "x", "components": [
        {"id": "a", "failure_rate": 0.1, "active_duration": 1, "fail_count": 1, "app_fail_count": 0, "cpu_demand": 1, "mem_demand": 1000, "restart_delay": 1},
        {"id": "b", "failure_rate": 0.1, "active_duration": 1, "fail_count": 1, "app_fail_count": 0, "cpu_demand": 1, "mem_demand": 1000, "restart_delay": 1}],
        "edges": [["a", "b"], ["b", "a"]]}"#;
    let o = run(&["rank", &write(tmp.path(), "cyclic.json", cyclic), "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cycle"));

    let graph = data("three_component.json");
    let o = run(&["plan", graph.to_str().unwrap(), "--nabla", "0", "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    let plan_dir = tmp.path().join("plan");
    assert!(run(&["plan", graph.to_str().unwrap(), "--out", plan_dir.to_str().unwrap()]).status.success());
    let dc = write(tmp.path(), "dc.json", r#"{"num_pods": 1, "machines_per_pod": 2}"#);
    let o = run(&["place", plan_dir.join("plan.json").to_str().unwrap(), "--datacenter", &dc, "--out", out]);
    assert_eq!(o.status.code(), Some(3));

    let o = run(&["figures", &write(tmp.path(), "empty.json", r#"{"strategies": []}"#), "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["rank", graph.to_str().unwrap(), "--format", "xml"]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["rank", "/nonexistent/graph.json", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_flag_changes_simulation_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"workload": {"num_apps": 10}, "strategies": ["rrft"], "fault": {"pm_failure_counts": [3]}}"#);
    let read = |seed: &str| {
        let out = tmp.path().join(format!("s{seed}"));
        assert!(run(&["simulate", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]).status.success());
        std::fs::read_to_string(out.join("simulation_summary.csv")).unwrap()
    };
    assert_ne!(read("1"), read("2"));
}
