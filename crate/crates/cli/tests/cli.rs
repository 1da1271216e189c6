use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(path: &str) -> String {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures");
    root.join(path).to_string_lossy().into_owned()
}

fn swarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swarm"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn check_ok_prints_exact_json() {
    let out = swarm(&[
        "check",
        &fixture("transport/protocol.json"),
        &fixture("transport/subs.json"),
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "{\"type\":\"OK\"}\n");
}

#[test]
fn check_reports_branch_blindness() {
    let out = swarm(&[
        "check",
        &fixture("transport/protocol.json"),
        &fixture("transport/subs-robot-missing-selected.json"),
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["type"], "ERROR");
    assert_eq!(v["errors"][0]["code"], "WF_BRANCH_BLIND");
}

#[test]
fn missing_file_is_a_usage_error() {
    let out = swarm(&[
        "check",
        &fixture("transport/none.json"),
        &fixture("transport/subs.json"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn parse_errors_name_the_field() {
    let out = swarm(&[
        "check",
        &fixture("transport/subs.json"),
        &fixture("transport/subs.json"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("subs.json"), "{err}");
}

#[test]
fn project_robot_and_unknown_role() {
    let p = fixture("transport/protocol.json");
    let s = fixture("transport/subs.json");
    let out = swarm(&["project", &p, &s, "--role", "robot"]);
    assert_eq!(out.status.code(), Some(0));
    let shape = stdout(&out);
    let check = swarm(&[
        "check-machine",
        &p,
        &s,
        "--role",
        "robot",
        &fixture("transport/robot.json"),
    ]);
    assert_eq!(check.status.code(), Some(0));
    assert!(shape.contains("\"initial\": \"initial\""));

    let dot = swarm(&["project", &p, &s, "--role", "robot", "--dot"]);
    assert!(stdout(&dot).starts_with("digraph"));

    assert_eq!(
        swarm(&["project", &p, &s, "--role", "nosuch"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn check_machine_finds_missing_reaction() {
    let out = swarm(&[
        "check-machine",
        &fixture("transport/protocol.json"),
        &fixture("transport/subs.json"),
        "--role",
        "robot",
        &fixture("transport/robot-missing-bid-reaction.json"),
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let first = &v["errors"][0];
    assert_eq!(first["code"], "PROJ_MISSING_REACTION");
    assert_eq!(first["path"], serde_json::json!(["requested"]));
}

#[test]
fn malformed_machine_is_a_usage_error() {
    let out = swarm(&[
        "check-machine",
        &fixture("transport/protocol.json"),
        &fixture("transport/subs.json"),
        "--role",
        "robot",
        &fixture("transport/protocol.json"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_seed_42_converges_and_writes_trace() {
    let trace = std::env::temp_dir().join(format!("swarm-trace-{}.ndjson", std::process::id()));
    let out = swarm(&[
        "simulate",
        &fixture("transport/scenario.json"),
        "--seed",
        "42",
        "--json",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["converged"], true);
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.lines().any(|l| l.contains("\"kind\":\"heal\"")));
    std::fs::remove_file(trace).unwrap();

    let again = swarm(&[
        "simulate",
        &fixture("transport/scenario.json"),
        "--seed",
        "42",
        "--json",
    ]);
    assert_eq!(stdout(&again), stdout(&out));
}

#[test]
fn ill_formed_sweep_fails() {
    let out = swarm(&[
        "simulate",
        &fixture("transport/scenario-robot-missing-selected.json"),
        "--seeds",
        "1..100",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("NOT converged"));
}

#[test]
fn bad_seed_range_is_a_usage_error() {
    let out = swarm(&[
        "simulate",
        &fixture("transport/scenario.json"),
        "--seeds",
        "5..x",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dot_output() {
    let out = swarm(&["dot", &fixture("transport/protocol.json")]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).matches(" -> ").count(), 3);

    let empty = std::env::temp_dir().join(format!("swarm-empty-{}.json", std::process::id()));
    std::fs::write(&empty, r#"{"initial": "only", "transitions": []}"#).unwrap();
    let out = swarm(&["dot", empty.to_str().unwrap()]);
    std::fs::remove_file(&empty).unwrap();
    let text = stdout(&out);
    assert_eq!(text.matches(" -> ").count(), 0);
    assert!(text.contains("\"only\" [peripheries=2];"));

    assert_eq!(
        swarm(&["dot", &fixture("nope.json")]).status.code(),
        Some(2)
    );
}
