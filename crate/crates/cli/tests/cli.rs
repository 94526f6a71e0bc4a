use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn recgym(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recgym"))
        .args(args)
        .output()
        .expect("spawn recgym")
}

fn ok_json(args: &[&str]) -> Value {
    let out = recgym(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_sessions(dir: &Path, sessions: &str) {
    ok_json(&[
        "synth-sessions",
        "--out",
        s(dir),
        "--sessions",
        sessions,
        "--planted",
        "--seed",
        "3",
    ]);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"stepz": 10}"#).unwrap();
    let out = recgym(&[
        "--config",
        s(&cfg),
        "train",
        "--agent",
        "dqn",
        "--dataset",
        "x",
        "--out",
        "y",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));
}

#[test]
fn bad_flag_value_is_a_config_error() {
    let out = recgym(&["eval", "--agent", "trpo", "--dataset", "x"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn run_without_config_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&recgym(&["run", "--out", s(tmp.path())])), 2);
}

#[test]
fn malformed_inputs_are_data_errors() {
    let tmp = TempDir::new().unwrap();
    let sessions = tmp.path().join("s.csv");
    let items = tmp.path().join("i.csv");
    fs::write(&sessions, "not,a,session,header\n1,2,3,4\n").unwrap();
    fs::write(&items, "item_id,properties\n1,a|b\n").unwrap();
    let out = recgym(&[
        "ingest",
        "--sessions",
        s(&sessions),
        "--items",
        s(&items),
        "--out",
        s(&tmp.path().join("ds")),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let out = recgym(&[
        "eval",
        "--model",
        s(&tmp.path().join("none.json")),
        "--dataset",
        s(tmp.path()),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn config_overrides_flags() {
    let tmp = TempDir::new().unwrap();
    let ds = tmp.path().join("ds");
    synth_sessions(&ds, "40");
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"steps": 120, "hidden": [4]}"#).unwrap();
    let v = ok_json(&[
        "--config",
        s(&cfg),
        "train",
        "--agent",
        "reinforce",
        "--dataset",
        s(&ds),
        "--steps",
        "999",
        "--out",
        s(&tmp.path().join("m.json")),
    ]);
    assert_eq!(v["steps"], 120);
    let model: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(model["version"], 1);
    assert_eq!(model["model"]["kind"], "reinforce");
    assert_eq!(model["model"]["scorer"]["network"]["sizes"][1], 4);
}

#[test]
fn exploding_learning_rate_reports_divergence() {
    let tmp = TempDir::new().unwrap();
    let ds = tmp.path().join("ds");
    synth_sessions(&ds, "40");
    let out = recgym(&[
        "train",
        "--agent",
        "dqn",
        "--dataset",
        s(&ds),
        "--steps",
        "300",
        "--hidden",
        "4",
        "--learning-rate",
        "1e300",
        "--out",
        s(&tmp.path().join("m.json")),
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_eval_compare_round_trip() {
    let tmp = TempDir::new().unwrap();
    let ds = tmp.path().join("ds");
    synth_sessions(&ds, "60");
    let model = tmp.path().join("m.json");
    ok_json(&[
        "train",
        "--agent",
        "dqn",
        "--dataset",
        s(&ds),
        "--steps",
        "200",
        "--hidden",
        "8",
        "--out",
        s(&model),
        "--metrics",
        s(&tmp.path().join("train.csv")),
        "--window",
        "20",
    ]);
    let csv = fs::read_to_string(tmp.path().join("train.csv")).unwrap();
    assert!(csv.starts_with("step,value,moving_average\n"));
    assert_eq!(csv.lines().count(), 201);

    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    let ev = ok_json(&[
        "eval",
        "--model",
        s(&model),
        "--dataset",
        s(&ds),
        "--episodes",
        "50",
        "--out",
        s(&a),
    ]);
    assert!(ev["metrics"]["ctr"].is_number());
    ok_json(&[
        "eval",
        "--agent",
        "popularity",
        "--dataset",
        s(&ds),
        "--episodes",
        "50",
        "--out",
        s(&b),
    ]);
    let out = recgym(&["compare", "--format", "csv", s(&a), s(&b)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("run,ctr"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn encode_prints_the_state() {
    let tmp = TempDir::new().unwrap();
    let ds = tmp.path().join("ds");
    synth_sessions(&ds, "5");
    let v = ok_json(&["encode", "--dataset", s(&ds), "--session", "s0"]);
    assert_eq!(v["state"]["session_id"], "s0");
    assert!(v["flat"].as_array().unwrap().len() > 25);
    let out = recgym(&["encode", "--dataset", s(&ds), "--session", "nope"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn bicluster_grid_recommend_chain() {
    let tmp = TempDir::new().unwrap();
    let p = |name: &str| tmp.path().join(name);
    ok_json(&[
        "synth-ratings",
        "--out",
        s(&p("r.data")),
        "--users",
        "80",
        "--items",
        "120",
        "--groups",
        "6",
        "--seed",
        "2",
    ]);
    let b = ok_json(&[
        "biclust",
        "--ratings",
        s(&p("r.data")),
        "--out",
        s(&p("bc.json")),
    ]);
    assert!(b["biclusters"].as_u64().unwrap() >= 16);
    let g = ok_json(&[
        "grid",
        "--biclusters",
        s(&p("bc.json")),
        "--n",
        "4",
        "--k",
        "2",
        "--iterations-per-temp",
        "20",
        "--out",
        s(&p("boards.json")),
        "--policy",
        s(&p("policy.json")),
        "--episodes",
        "100",
    ]);
    assert_eq!(g["h"].as_array().unwrap().len(), 2);
    let r = ok_json(&[
        "recommend",
        "--boards",
        s(&p("boards.json")),
        "--policy",
        s(&p("policy.json")),
        "--history",
        s(&p("r.data")),
        "--hidden",
        s(&p("r.data")),
        "--n-items",
        "10",
        "--out",
        s(&p("recs.csv")),
        "--recall-out",
        s(&p("recall.csv")),
    ]);
    assert!(r["users"].as_u64().unwrap() > 0);
    let recs = fs::read_to_string(p("recs.csv")).unwrap();
    assert!(recs.starts_with("user_id,rank,item_id\n"));
    assert!(fs::read_to_string(p("recall.csv"))
        .unwrap()
        .starts_with("user_id,"));

    // a replay model is not a gridworld policy
    let out = recgym(&[
        "grid",
        "--biclusters",
        s(&p("r.data")),
        "--out",
        s(&p("x.json")),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn repeated_runs_write_identical_metrics() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(
        &cfg,
        r#"{
            "name": "tiny-dqn",
            "seed": 5,
            "window": 10,
            "pipeline": {
                "kind": "replay",
                "data": {"source": "synthetic", "sessions": 40, "click_model": {"kind": "planted"}},
                "agent": "dqn",
                "agent_config": {"hidden": [8], "train_steps": 150},
                "eval_episodes": 30
            }
        }"#,
    )
    .unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        ok_json(&["--config", s(&cfg), "run", "--out", s(dir)]);
    }
    for f in [
        "train_metrics.csv",
        "eval_metrics.csv",
        "slot_histogram.csv",
        "model.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let out = recgym(&[
        "compare",
        s(&a.join("summary.json")),
        s(&b.join("summary.json")),
    ]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("tiny-dqn"));
}
