use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn repro(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repro"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn canonical(dir: &Path) -> Output {
    let out = repro(dir, &["run", "--planner", "history_fed", "--seed", "42", "--out", "t.rlam-trace"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn run_writes_five_node_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = canonical(dir.path());
    assert!(stdout(&out).starts_with("run: trace_id=run-history_fed-seed42 terminal=Done iterations=5 executed=5 logged=5\n"));
    let trace = fs::read_to_string(dir.path().join("t.rlam-trace")).unwrap();
    assert_eq!(trace.lines().count(), 6);
    assert!(dir.path().join("objects").is_dir());
}

#[test]
fn replay_verifies_without_dispatch() {
    let dir = tempfile::tempdir().unwrap();
    canonical(dir.path());
    let out = repro(dir.path(), &["replay", "t.rlam-trace", "--verify"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).ends_with("replay: identical=1 dispatches=0\n"));
}

#[test]
fn tampered_store_fails_verification_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let run = stdout(&canonical(dir.path()));
    let model = run
        .lines()
        .find_map(|l| l.strip_prefix("artifact: model "))
        .unwrap()
        .to_string();
    let path = dir.path().join("objects").join(&model[..2]).join(&model);
    let mut bytes = fs::read(&path).unwrap();
    bytes[5] ^= 0x20;
    fs::write(&path, bytes).unwrap();
    let out = repro(dir.path(), &["replay", "t.rlam-trace", "--verify"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).ends_with("replay: identical=0 dispatches=0\n"));
}

#[test]
fn fork_then_inspect_shows_replayed_prefix() {
    let dir = tempfile::tempdir().unwrap();
    canonical(dir.path());
    let before = fs::read(dir.path().join("t.rlam-trace")).unwrap();
    let out = repro(
        dir.path(),
        &["fork", "t.rlam-trace", "--at", "a3", "--set", "learning_rate=0.2", "--out", "t2.rlam-trace"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("fork: at=a3 dispatches=2\n"));
    assert_eq!(fs::read(dir.path().join("t.rlam-trace")).unwrap(), before);

    let inspect = stdout(&repro(dir.path(), &["inspect", "t2.rlam-trace"]));
    assert_eq!(inspect.matches(" Replayed ").count(), 3);
    assert_eq!(inspect.matches(" Success ").count(), 2);
    assert!(inspect.contains("fork_of run-history_fed-seed42 at a3\n"));
}

#[test]
fn naive_run_leaves_no_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = repro(
        dir.path(),
        &["run", "--planner", "history_free", "--provenance", "off", "--inject-failure", "train", "--out", "n.rlam-trace"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("n.rlam-trace").exists());
    let text = stdout(&out);
    assert!(text.contains("logged=0"));
    assert!(text.contains("InjectedTrainingFault"));
}

#[test]
fn failure_run_recovers_and_is_inspectable() {
    let dir = tempfile::tempdir().unwrap();
    let out = repro(dir.path(), &["run", "--planner", "history_fed", "--inject-failure", "train", "--out", "f.rlam-trace"]);
    assert_eq!(out.status.code(), Some(0));
    let inspect = stdout(&repro(dir.path(), &["inspect", "f.rlam-trace"]));
    assert!(inspect.contains("a3 train Failed"));
    assert!(inspect.contains("failure=InjectedTrainingFault partial=[checkpoint]"));
    assert!(inspect.contains("recovery_of=a3"));
    let dot = stdout(&repro(dir.path(), &["inspect", "f.rlam-trace", "--dot"]));
    assert!(dot.starts_with("digraph \"run-history_fed-seed42-fault\" {\n"));
    assert!(dot.contains("\"a4\" -> \"a3\" [style=dotted"));
}

#[test]
fn identical_inputs_give_identical_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(canonical(a.path()).stdout, canonical(b.path()).stdout);
    assert_eq!(
        fs::read(a.path().join("t.rlam-trace")).unwrap(),
        fs::read(b.path().join("t.rlam-trace")).unwrap()
    );
    let ia = repro(a.path(), &["inspect", "t.rlam-trace"]);
    let ib = repro(b.path(), &["inspect", "t.rlam-trace"]);
    assert_eq!(ia.stdout, ib.stdout);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "planner = \"scripted\"\nseed = 7\niterations = 50\n",
    )
    .unwrap();
    let out = repro(dir.path(), &["run", "--config", "run.toml", "--seed", "9", "--out", "c.rlam-trace"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("run: trace_id=run-scripted-seed9 "));
    let trace = fs::read_to_string(dir.path().join("c.rlam-trace")).unwrap();
    assert!(trace.contains("\"iterations\":50"));

    fs::write(dir.path().join("bad.toml"), "colour = \"blue\"\n").unwrap();
    let out = repro(dir.path(), &["run", "--config", "bad.toml", "--out", "x.rlam-trace"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn operational_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = repro(dir.path(), &["inspect", "missing.rlam-trace"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.rlam-trace"));

    fs::write(dir.path().join("junk.rlam-trace"), "{}\n").unwrap();
    assert_eq!(repro(dir.path(), &["replay", "junk.rlam-trace"]).status.code(), Some(1));

    assert_eq!(repro(dir.path(), &["run", "--planner", "oracle", "--out", "x"]).status.code(), Some(1));
    assert_eq!(repro(dir.path(), &["run", "--unknown-flag", "--out", "x"]).status.code(), Some(1));

    canonical(dir.path());
    let out = repro(dir.path(), &["fork", "t.rlam-trace", "--at", "a1", "--set", "a0.seed=3", "--out", "f.rlam-trace"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("f.rlam-trace").exists());
}

#[test]
fn evaluate_prints_reference_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = repro(dir.path(), &["evaluate", "--runs", "2", "--report", "report.json"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        stdout(&out),
        "Pipeline           Replay  Trace  Failure  Variance\n\
         Script-Based          1.0    0.0      1.0       0.0\n\
         Naive LAM             0.0    0.0      1.0       1.0\n\
         R-LAM Constrained     1.0    1.0      1.0       0.0\n"
    );
    let report = fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(report.starts_with("{\"rows\":[{\"failure\":1.0,\"pipeline\":\"ScriptBased\""));
    assert_eq!(repro(dir.path(), &["evaluate", "--runs", "1"]).status.code(), Some(1));
}
