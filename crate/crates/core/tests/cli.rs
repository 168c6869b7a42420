use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sparq::harness::{RunLog, CSV_HEADER};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparq"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn exec(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().expect("spawn");
    (
        status.code().expect("exit code"),
        String::from_utf8_lossy(&stdout).into_owned(),
        String::from_utf8_lossy(&stderr).into_owned(),
    )
}

fn run(cfg: &str, out: &Path, sets: &[&str]) -> (i32, String, String) {
    let mut cmd = bin();
    cmd.arg("run").arg(config(cfg)).arg("--out").arg(out);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    exec(&mut cmd)
}

#[test]
fn run_writes_csv_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("m");
    let (code, stdout, _) = run("minimal.toml", &stem, &[]);
    assert_eq!(code, 0, "{stdout}");
    let text = std::fs::read_to_string(stem.with_extension("csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(text.lines().count(), 101);
    assert!(stem.with_extension("json").exists());
    let rows = RunLog::read_csv(&stem.with_extension("csv")).unwrap();
    assert_eq!(rows.len(), 100);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = run("minimal.toml", &dir.path().join("x"), &["graph.bogus=1"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("bogus"), "{stderr}");

    let (code, _, _) = exec(bin().arg("run").arg(dir.path().join("missing.toml")));
    assert_eq!(code, 2);

    let (code, _, _) = run("minimal.toml", &dir.path().join("x"), &["lr.eta=-1"]);
    assert_eq!(code, 2);
}

#[test]
fn divergence_exits_3_and_keeps_partial_log() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("d");
    let (code, _, stderr) = run("minimal.toml", &stem, &["lr.eta=5.0", "T=5000", "objective.noise_std=0.0"]);
    assert_eq!(code, 3, "{stderr}");
    let rows = RunLog::read_csv(&stem.with_extension("csv")).unwrap();
    assert!(!rows.is_empty() && rows.len() < 5000);
}

#[test]
fn audit_passes_then_detects_corrupted_replica() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("a");
    let (code, stdout, stderr) = run("audit_ring.toml", &stem, &["T=200"]);
    assert_eq!(code, 0, "{stdout}{stderr}");
    assert!(stdout.contains("PASS replica_consistency"), "{stdout}");

    let csv = stem.with_extension("csv");
    let (code, stdout, _) = exec(bin().arg("audit").arg(&csv));
    assert_eq!(code, 0, "{stdout}");

    // Flip the sign of one nonzero replica coordinate at t = 39.
    let states = stem.with_extension("states.jsonl");
    let text = std::fs::read_to_string(&states).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let idx = lines
        .iter()
        .position(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["t"] == 39)
        .unwrap();
    let mut rec: serde_json::Value = serde_json::from_str(&lines[idx]).unwrap();
    let replica = &mut rec["nodes"][3]["replicas"][0]["x_hat"];
    let k = replica
        .as_array()
        .unwrap()
        .iter()
        .position(|v| v.as_f64().unwrap() != 0.0)
        .unwrap();
    replica[k] = serde_json::json!(-replica[k].as_f64().unwrap());
    lines[idx] = rec.to_string();
    std::fs::write(&states, lines.join("\n") + "\n").unwrap();

    let (code, stdout, _) = exec(bin().arg("audit").arg(&csv));
    assert_eq!(code, 4, "{stdout}");
    let line = stdout.lines().find(|l| l.contains("replica_consistency")).unwrap();
    assert!(line.starts_with("FAIL"), "{line}");
    assert!(line.contains("t=39 node=3"), "{line}");
}

#[test]
fn audit_without_states_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("m");
    assert_eq!(run("minimal.toml", &stem, &[]).0, 0);
    let (code, _, stderr) = exec(bin().arg("audit").arg(stem.with_extension("csv")));
    assert_eq!(code, 2);
    assert!(stderr.contains("record_states"), "{stderr}");
}

#[test]
fn vanilla_audit_marks_trigger_not_applicable() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("v");
    let (code, stdout, _) = run("minimal.toml", &stem, &["flags.record_states=true"]);
    assert_eq!(code, 0, "{stdout}");
    let (code, stdout, _) = exec(bin().arg("audit").arg(stem.with_extension("csv")));
    assert_eq!(code, 0, "{stdout}");
    let line = stdout.lines().find(|l| l.contains("trigger_bound")).unwrap();
    assert!(line.starts_with("N/A"), "{line}");
}

#[test]
fn compare_identical_logs_and_unreached_targets() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run("minimal.toml", &a, &[]).0, 0);
    assert_eq!(run("minimal.toml", &b, &[]).0, 0);
    let rows = RunLog::read_csv(&a.with_extension("csv")).unwrap();
    let target = rows[50].optimality_gap.unwrap();
    let out = dir.path().join("cmp.csv");
    let (code, stdout, _) = exec(
        bin()
            .arg("compare")
            .arg(a.with_extension("csv"))
            .arg(b.with_extension("csv"))
            .arg("--target")
            .arg(target.to_string())
            .arg("--out")
            .arg(&out),
    );
    assert_eq!(code, 0, "{stdout}");
    assert_eq!(stdout.matches("1.000").count(), 2, "{stdout}");
    assert!(out.exists());

    let (code, stdout, _) = exec(
        bin()
            .arg("compare")
            .arg(a.with_extension("csv"))
            .arg(b.with_extension("csv"))
            .arg("--target")
            .arg("1e-300"),
    );
    assert_eq!(code, 0);
    assert!(stdout.contains("unreached"), "{stdout}");
}

#[test]
fn compare_refuses_mismatched_problems() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run("minimal.toml", &a, &[]).0, 0);
    assert_eq!(run("minimal.toml", &b, &["objective.mu=0.5"]).0, 0);
    let (code, _, stderr) = exec(
        bin()
            .arg("compare")
            .arg(a.with_extension("csv"))
            .arg(b.with_extension("csv"))
            .arg("--target")
            .arg("1e-2"),
    );
    assert_eq!(code, 2, "{stderr}");
}

#[test]
fn certify_and_spectral_report() {
    let (code, stdout, _) = exec(bin().args(["certify-omega", "--kind", "top_k", "--d", "16", "--k", "4", "--trials", "1000"]));
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("top_k"), "{stdout}");

    let (code, stdout, _) = exec(bin().args(["spectral", "--topology", "ring", "--n", "8", "--omega", "0.25"]));
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("gamma"), "{stdout}");

    let (code, _, _) = exec(bin().args(["spectral", "--topology", "custom", "--n", "4", "--edges", "0-1,2-3", "--omega", "0.5"]));
    assert_eq!(code, 2);
}
