use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn genret(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genret")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn preset_prints_valid_json() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["dsi", "nci", "d2q_only"] {
        let o = genret(&["preset", name], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!(v["mixture"].is_array());
    }
    assert_eq!(genret(&["preset", "nope"], dir.path()).status.code(), Some(1));
}

#[test]
fn bad_model_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = genret(&["cost", "--set", "model.num_heads=5", "--set", "cost.corpus_size=10", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = genret(&["cost", "--set", "model.bogus=1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus"));
}

#[test]
fn missing_and_malformed_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = genret(&["subset", "--set", "corpus.docs=\"nowhere.jsonl\"", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    fs::write(dir.path().join("run.tsv"), "q1\td1\t1\t-0.5\nq2\td1\n").unwrap();
    fs::write(dir.path().join("qrels.tsv"), "q1\td1\n").unwrap();
    let o = genret(&["eval", "--run", "run.tsv", "--qrels", "qrels.tsv", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run.tsv:2"), "{}", stderr(&o));
}

#[test]
fn eval_of_perfect_run_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = String::new();
    let mut qrels = String::new();
    for q in 0..5 {
        run.push_str(&format!("q{q}\td{q}\t1\t-0.100000\nq{q}\tother\t2\t-3.000000\n"));
        qrels.push_str(&format!("q{q}\td{q}\n"));
    }
    fs::write(dir.path().join("run.tsv"), run).unwrap();
    fs::write(dir.path().join("qrels.tsv"), qrels).unwrap();
    let o = genret(&["eval", "--run", "run.tsv", "--qrels", "qrels.tsv", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out/eval/report.json")).unwrap()).unwrap();
    let reports = report["reports"].as_array().unwrap();
    assert!(!reports.is_empty());
    for r in reports {
        assert_eq!(r["mean"].as_f64(), Some(1.0), "{r}");
    }
    assert!(dir.path().join("out/eval/config.json").exists());
    assert!(!dir.path().join("out/eval/.lock").exists());
}

#[test]
fn cost_reports_seven_billion_for_atomic() {
    let dir = tempfile::tempdir().unwrap();
    let o = genret(&["cost", "--set", "scheme.kind=\"atomic\"", "--set", "cost.corpus_size=8841823", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let cost: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out/cost/cost.json")).unwrap()).unwrap();
    let total = cost["total_params"].as_f64().unwrap();
    assert!((total - 7.0e9).abs() < 0.05 * 7.0e9, "{total}");
}

#[test]
fn held_lock_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("out/cost")).unwrap();
    fs::write(dir.path().join("out/cost/.lock"), "").unwrap();
    let o = genret(&["cost", "--set", "cost.corpus_size=100", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!dir.path().join("out/cost/cost.json").exists());
}
