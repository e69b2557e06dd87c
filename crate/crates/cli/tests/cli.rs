use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn cnsm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cnsm")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cnsm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL_TRAIN: &str = r#"{ "forest": { "tree_count": 20 }, "gbt": { "tree_count": 50 } }"#;

/// generate → ingest → preprocess → features → train → combine, all in `dir`.
fn offline_workflow(dir: &Path, repair: bool) {
    std::fs::write(dir.join("train.json"), SMALL_TRAIN).unwrap();
    ok(dir, &["generate", "--seed", "7", "--samples", "1000", "--out", "trace.jsonl"]);
    ok(dir, &["ingest", "--kb", "kb", "--trace", "trace.jsonl"]);
    let mut pre = vec!["preprocess", "--kb", "kb", "--report", "repair.json"];
    if !repair {
        pre.push("--no-target-repair");
    }
    ok(dir, &pre);
    ok(dir, &["features", "--kb", "kb"]);
    ok(dir, &["train", "--kb", "kb", "--seed", "1", "--config", "train.json"]);
    ok(dir, &["combine", "--kb", "kb", "--step", "5"]);
}

fn manifests(kb: &Path) -> Vec<Value> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(kb.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    paths.iter().map(|p| serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()).collect()
}

fn output_digests(kb: &Path) -> BTreeMap<String, String> {
    let mut all = BTreeMap::new();
    for m in manifests(kb) {
        for (k, v) in m["outputs"].as_object().unwrap() {
            all.insert(format!("{}:{k}", m["command"].as_str().unwrap()), v.as_str().unwrap().to_string());
        }
    }
    all
}

#[test]
fn help_maps_subcommands_to_phases() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(dir.path(), &["--help"]);
    for needle in ["Phase 1", "Phase 4", "run-pcs", "fallback"] {
        assert!(help.contains(needle), "help lacks {needle}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cnsm(dir.path(), &["train", "--kb", "kb", "--bogus"]).status.code(), Some(1));
    assert_eq!(cnsm(dir.path(), &["frobnicate"]).status.code(), Some(1));
    // stochastic commands need a seed
    assert_eq!(cnsm(dir.path(), &["generate", "--out", "t.jsonl"]).status.code(), Some(1));
    assert_eq!(cnsm(dir.path(), &["ingest", "--kb", "kb", "--trace", "missing.jsonl"]).status.code(), Some(1));
    assert_eq!(cnsm(dir.path(), &["report", "--kb", "nowhere"]).status.code(), Some(1));
}

#[test]
fn workflow_gates_and_determinism() {
    let dirty = tempfile::tempdir().unwrap();
    offline_workflow(dirty.path(), false);
    let out = cnsm(dirty.path(), &["evaluate", "--kb", "kb"]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let verdict = stdout.lines().find_map(|l| l.strip_prefix("verdict: ")).expect("verdict line");
    let v: Value = serde_json::from_str(verdict).unwrap();
    assert_eq!(v["verdict"], "fallback_phase2");
    assert_eq!(v["model_id"], "lasso");
    assert_eq!(v["actual"], 3.0);

    let clean = tempfile::tempdir().unwrap();
    offline_workflow(clean.path(), true);
    let stdout = ok(clean.path(), &["evaluate", "--kb", "kb", "--out", "report.json"]);
    assert!(stdout.contains(r#"verdict: {"verdict":"accept"}"#));
    let accepted = output_digests(&clean.path().join("kb"));

    let out = cnsm(clean.path(), &["evaluate", "--kb", "kb", "--profile", "sleeping_iot"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stdout).unwrap().contains("fallback_phase1"));

    let report = ok(clean.path(), &["report", "--kb", "kb"]);
    for col in ["RMSE", "MAPE (%)", "Accuracy (%)", "combined"] {
        assert!(report.contains(col), "report lacks {col}:\n{report}");
    }

    // Same seeds in a fresh directory give the same artifacts.
    let again = tempfile::tempdir().unwrap();
    offline_workflow(again.path(), true);
    ok(again.path(), &["evaluate", "--kb", "kb", "--out", "report.json"]);
    let repeated = output_digests(&again.path().join("kb"));
    assert!(accepted.len() >= 10);
    assert_eq!(accepted, repeated);
    assert_eq!(
        std::fs::read(clean.path().join("trace.jsonl")).unwrap(),
        std::fs::read(again.path().join("trace.jsonl")).unwrap()
    );
}

#[test]
fn manifests_reference_what_was_written() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--seed", "3", "--samples", "120", "--out", "trace.jsonl", "--truth", "truth.jsonl"]);
    let side: Value = serde_json::from_str(&std::fs::read_to_string(d.join("trace.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(side["seeds"]["generator"], 3);
    assert_eq!(side["outputs"].as_object().unwrap().len(), 2);

    ok(d, &["ingest", "--kb", "kb", "--trace", "trace.jsonl"]);
    ok(d, &["preprocess", "--kb", "kb"]);
    ok(d, &["features", "--kb", "kb", "--split", "kfold", "--seed", "4"]);
    let kb = d.join("kb");
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for m in manifests(&kb) {
        for (path, digest) in m["outputs"].as_object().unwrap() {
            *seen.entry(path.clone()).or_default() += 1;
            let bytes = std::fs::read(kb.join(path)).unwrap();
            assert_eq!(cnsm_core::kb::sha256_hex(&bytes), digest.as_str().unwrap(), "{path}");
        }
    }
    assert!(seen.values().all(|&n| n == 1), "{seen:?}");
    assert!(seen.contains_key("datasets/clean/data.csv"));
    assert!(seen.contains_key("feature_sets/fs.json"));
    assert_eq!(cnsm(d, &["features", "--kb", "kb", "--id", "other", "--split", "kfold"]).status.code(), Some(1));
}

#[test]
fn runtime_commands_write_logs_and_feedback() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(cnsm(d, &["run-pcs", "--kb", "kb", "--seed", "3", "--out", "pcs"]).status.code(), Some(1));
    ok(d, &["anomaly", "--kb", "kb", "--fit", "--k", "3", "--seed", "5"]);
    let scored = ok(d, &["anomaly", "--kb", "kb", "--score", "--threshold", "3.0", "--seed", "3", "--ticks", "200"]);
    let detections: Vec<Value> = scored.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(detections.iter().any(|v| v["class"] == "mie_surge"), "{scored}");

    let summary = ok(d, &["run-pcs", "--kb", "kb", "--scenario", "mie", "--ticks", "200", "--seed", "3", "--out", "pcs"]);
    assert!(summary.contains("ehealth"));
    for f in ["events.jsonl", "ledger.json", "sla.json", "detections.json"] {
        assert!(d.join("pcs").join(f).is_file(), "{f}");
    }
    ok(d, &["run-pcs", "--kb", "kb", "--ticks", "50", "--seed", "3", "--controller", "reactive", "--out", "pcs2"]);
    assert_eq!(
        cnsm(d, &["run-pcs", "--kb", "kb", "--seed", "3", "--model", "nope", "--out", "pcs3"]).status.code(),
        Some(1)
    );

    let log = std::fs::read_to_string(d.join("kb/feedback.jsonl")).unwrap();
    let ticks: Vec<u64> = log.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["tick"].as_u64().unwrap()).collect();
    assert!(ticks.len() > 200);
    assert!(ticks.windows(2).all(|w| w[0] <= w[1]));
}
