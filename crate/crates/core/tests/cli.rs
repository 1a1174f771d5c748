//! The command-line tool, driven as a subprocess.

use std::fs;
use std::path::Path;
use std::process::Command;

use overflow_probe::evaluation::report::Grid;
use overflow_probe::evaluation::EvalReport;
use overflow_probe::tensor_io::{read_manifest, write_manifest, InstanceRecord};

fn run(cwd: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_overflow-probe"))
        .args(args)
        .current_dir(cwd)
        .env_remove("OVERFLOW_PROBE_SEED")
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let (code, out, err) = run(cwd, args);
    assert_eq!(code, 0, "{args:?}: {err}");
    out
}

fn text_record(id: usize, comp_correct: bool) -> InstanceRecord {
    serde_json::from_value(serde_json::json!({
        "id": format!("r{id}"),
        "question": "q",
        "context": "word ".repeat(5 + id),
        "answers": ["a"],
        "ref_correct": true,
        "comp_correct": comp_correct,
        "token_count": 5 + id,
        "perplexity": 3.0 + id as f64,
        "rep_paths": {}
    }))
    .unwrap()
}

#[test]
fn single_class_eval_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let recs: Vec<_> = (0..20).map(|i| text_record(i, true)).collect();
    write_manifest(dir.path().join("m.jsonl"), &recs).unwrap();
    let (code, _, err) = run(
        dir.path(),
        &["eval", "--manifest", "m.jsonl", "--stage", "pre_compression", "--features", "context", "--out", "e"],
    );
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("single class"), "{err}");
}

#[test]
fn usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(run(p, &[]).0, 1);
    assert_eq!(run(p, &["--help"]).0, 0);
    let (code, _, err) = run(p, &["eval", "--manifest", "m.jsonl", "--stage", "nowhere", "--features", "context", "--out", "e"]);
    assert_eq!(code, 1, "{err}");
    let (code, _, err) = run(p, &["eval", "--manifest", "m.jsonl", "--stage", "pre_compression", "--features", "attention", "--out", "e"]);
    assert_eq!(code, 1, "{err}");
    let (code, _, err) = run(p, &["eval", "--manifest", "missing.jsonl", "--stage", "pre_compression", "--features", "context", "--out", "e"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("missing.jsonl"), "{err}");
    let (code, _, err) = run(p, &["label", "--manifest", "m.jsonl", "--judge", "external", "--out", "l.jsonl"]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn missing_feature_names_the_instance() {
    let dir = tempfile::tempdir().unwrap();
    let mut recs: Vec<_> = (0..20).map(|i| text_record(i, i % 3 == 0)).collect();
    recs[4].perplexity = None;
    write_manifest(dir.path().join("m.jsonl"), &recs).unwrap();
    let (code, _, err) = run(
        dir.path(),
        &["eval", "--manifest", "m.jsonl", "--stage", "pre_compression", "--features", "context", "--out", "e"],
    );
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("r4") && err.contains("perplexity"), "{err}");
}

#[test]
fn config_file_fills_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let recs: Vec<_> = (0..30).map(|i| text_record(i, i % 3 == 0)).collect();
    write_manifest(p.join("m.jsonl"), &recs).unwrap();
    fs::write(
        p.join("c.json"),
        r#"{"seed": 11, "eval": {"folds": 3, "stage": "pre_compression", "features": "context"}}"#,
    )
    .unwrap();
    ok(p, &["--config", "c.json", "eval", "--manifest", "m.jsonl", "--out", "a"]);
    ok(p, &["--config", "c.json", "eval", "--manifest", "m.jsonl", "--seed", "12", "--out", "b"]);
    let a: EvalReport = serde_json::from_slice(&fs::read(p.join("a/report.json")).unwrap()).unwrap();
    let b: EvalReport = serde_json::from_slice(&fs::read(p.join("b/report.json")).unwrap()).unwrap();
    assert_eq!((a.config.seed, a.config.folds), (11, 3));
    assert_eq!((b.config.seed, b.config.folds), (12, 3));
    assert_ne!(a.config_digest, b.config_digest);

    let out = Command::new(env!("CARGO_BIN_EXE_overflow-probe"))
        .args(["eval", "--manifest", "m.jsonl", "--stage", "pre_compression", "--features", "context", "--out", "c"])
        .current_dir(p)
        .env("OVERFLOW_PROBE_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    let c: EvalReport = serde_json::from_slice(&fs::read(p.join("c/report.json")).unwrap()).unwrap();
    assert_eq!(c.config.seed, 5);

    fs::write(p.join("bad.json"), r#"{"eval": {"fold": 3}}"#).unwrap();
    let (code, _, err) = run(p, &["--config", "bad.json", "eval", "--manifest", "m.jsonl", "--out", "d"]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn grid_over_the_six_feature_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["synth", "--n-instances", "250", "--out", "w"]);
    let cells = [
        ("pre_compression", "context"),
        ("pre_inference", "saturation"),
        ("middle_layer", "saturation_joint"),
        ("last_layer", "attention"),
        ("pre_inference", "representation"),
        ("pre_inference", "representation_joint"),
    ];
    let mut dirs = Vec::new();
    for (stage, set) in cells {
        let out = format!("r_{set}");
        ok(p, &["eval", "--manifest", "w/manifest.jsonl", "--stage", stage, "--features", set, "--out", &out]);
        dirs.push(out);
    }
    let mut args = vec!["report"];
    args.extend(dirs.iter().map(String::as_str));
    args.extend(["--out", "grid"]);
    let text = ok(p, &args);
    let grid: Grid = serde_json::from_slice(&fs::read(p.join("grid/grid.json")).unwrap()).unwrap();
    assert_eq!(grid.rows.len(), 6);
    assert_eq!(grid.config_digests.len(), 6);
    for (col, _) in grid.stages.iter().enumerate() {
        let filled: Vec<_> = grid.rows.iter().filter_map(|r| r.cells[col].as_ref()).collect();
        let best = filled.iter().map(|c| c.mean_auc).fold(f64::NEG_INFINITY, f64::max);
        assert!(filled.iter().any(|c| c.best));
        assert!(filled.iter().all(|c| c.best == (c.mean_auc == best)));
    }
    assert!(text.contains('*'));
    assert_eq!(fs::read_to_string(p.join("grid/grid.txt")).unwrap(), text);

    // the same report twice in one grid is rejected
    let (code, _, err) = run(p, &["report", "r_context", "r_context", "--out", "g2"]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn label_then_features_then_train() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["synth", "--n-instances", "120", "--seed", "3", "--out", "w"]);
    // labeled manifest in another directory keeps its file references valid
    fs::create_dir(p.join("elsewhere")).unwrap();
    ok(p, &["label", "--manifest", "w/manifest.jsonl", "--out", "elsewhere/l.jsonl"]);
    let m = read_manifest(p.join("elsewhere/l.jsonl")).unwrap();
    assert_eq!(m.records.len(), 120);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(p.join("elsewhere/l.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["counts"]["kept"], 120);
    assert!(summary["config_digest"].as_str().unwrap().len() == 64);

    ok(
        p,
        &["features", "--manifest", "elsewhere/l.jsonl", "--stage", "post_inference", "--features", "saturation_joint", "--out", "f/sj"],
    );
    let side: serde_json::Value = serde_json::from_slice(&fs::read(p.join("f/sj.json")).unwrap()).unwrap();
    assert_eq!(side["labels"].as_array().unwrap().len(), 120);
    ok(p, &["train", "--cache", "f/sj", "--out", "model"]);
    let header: serde_json::Value = serde_json::from_slice(&fs::read(p.join("model/model.json")).unwrap()).unwrap();
    assert_eq!(header["architecture"], "logistic");
    ok(p, &["eval", "--cache", "f/sj", "--folds", "3", "--out", "e"]);
    let r: EvalReport = serde_json::from_slice(&fs::read(p.join("e/report.json")).unwrap()).unwrap();
    assert_eq!(r.fold_aucs.len(), 3);
    assert_eq!(r.n_instances, 120);
}

#[test]
fn token_type_corpus_files() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--preset", "token-types", "--n-instances", "10", "--out", "t"]);
    let t = overflow_probe::tensor_io::read_tensor(dir.path().join("t/tokens.ovt")).unwrap();
    assert_eq!(t.shape(), &[20, 4096]);
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("t/tokens.json")).unwrap()).unwrap();
    assert_eq!(meta["labels"].as_array().unwrap().len(), 20);
}
