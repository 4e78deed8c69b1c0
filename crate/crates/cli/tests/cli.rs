use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TOY: &str = r#"{
  "seed": 11,
  "encoder": {"dim": 512},
  "model": {"hidden_dim": 16, "output_dim": 8},
  "train": {"epochs": 2, "batch_size": 24},
  "synth": {"n_families": 3, "docs_per_class": 15, "doc_len_range": [20, 40]}
}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_authorship"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn with<'a>(rest: &[&'a str]) -> Vec<&'a str> {
    [&["--config", "toy.json"][..], rest].concat()
}

fn toy_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.json"), TOY).unwrap();
    dir
}

fn error_json(out: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().expect("stderr has an error line");
    serde_json::from_str(line).expect("error line is JSON")
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_model_is_a_usage_error() {
    let dir = toy_dir();
    ok(dir.path(), &["--config", "toy.json", "synth", "--out", "c.jsonl"]);
    let out = run(dir.path(), &["--config", "toy.json", "index", "--corpus", "c.jsonl", "--out", "i.fidx"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"train": {"epochz": 3}}"#).unwrap();
    let out = run(dir.path(), &["--config", "bad.json", "synth", "--out", "c.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "ConfigInvalid");
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let dir = toy_dir();
    let d = dir.path();

    ok(d, &with(&["synth", "--out", "work/corpus.jsonl"]));
    ok(d, &with(&["embed", "--corpus", "work/corpus.jsonl", "--out", "work/base.femb"]));
    ok(
        d,
        &with(&[
            "train", "--corpus", "work/corpus.jsonl", "--embeddings", "work/base.femb", "--out", "work/model.fmdl",
        ]),
    );
    assert!(d.join("work/model.fmdl.history.csv").exists());
    let common = [
        "--corpus", "work/corpus.jsonl", "--embeddings", "work/base.femb", "--model", "work/model.fmdl",
    ];
    ok(d, &with(&[&["index"][..], &common, &["--out", "work/index.fidx"]].concat()));
    assert!(d.join("work/index.fidx.families.json").exists());

    let out = ok(d, &with(&[&["classify"][..], &common, &["--index", "work/index.fidx", "--input", "work/corpus.jsonl"]].concat()));
    let lines: Vec<serde_json::Value> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), (2 * 3 + 1) * 15);
    for rec in &lines {
        let m = rec["memberships"].as_object().unwrap();
        let total: f64 = m.values().map(|v| v.as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(rec["predicted"].is_string());
    }

    ok(
        d,
        &with(&[
            &["adapt"][..],
            &common,
            &["--index", "work/index.fidx", "--splits", "test", "--per-class", "3", "--out", "work/adapted.fidx"],
        ]
        .concat()),
    );
    ok(
        d,
        &with(&[
            &["eval"][..],
            &common,
            &["--index", "work/adapted.fidx", "--out", "work/metrics.json", "--confusion", "work/confusion.csv"],
        ]
        .concat()),
    );
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(d.join("work/metrics.json")).unwrap()).unwrap();
    for key in ["accuracy", "precision_macro", "recall_macro", "f1_macro", "mse", "mae"] {
        assert!(metrics["three_class"][key].is_number(), "missing {key}");
    }
    assert!(fs::read_to_string(d.join("work/confusion.csv")).unwrap().starts_with("gold\\predicted"));

    ok(d, &with(&[&["diagnose"][..], &common, &["--out", "work/ordering.json"]].concat()));
    let ordering: serde_json::Value = serde_json::from_slice(&fs::read(d.join("work/ordering.json")).unwrap()).unwrap();
    assert_eq!(ordering["levels"].as_array().unwrap().len(), 5);
}

#[test]
fn dim_mismatch_between_model_and_index_is_reported() {
    let dir = toy_dir();
    let d = dir.path();
    ok(d, &["--config", "toy.json", "synth", "--out", "c.jsonl"]);
    ok(d, &["--config", "toy.json", "train", "--corpus", "c.jsonl", "--out", "a.fmdl"]);
    ok(d, &["--config", "toy.json", "train", "--corpus", "c.jsonl", "--output-dim", "6", "--out", "b.fmdl"]);
    ok(d, &["--config", "toy.json", "index", "--corpus", "c.jsonl", "--model", "a.fmdl", "--out", "a.fidx"]);
    fs::write(d.join("q.txt"), "a plain line of text\n").unwrap();
    let out = run(
        d,
        &["--config", "toy.json", "classify", "--model", "b.fmdl", "--index", "a.fidx", "--input", "q.txt"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"], "DimMismatch");
    assert!(String::from_utf8_lossy(&out.stderr).contains("DimMismatch"));
}

#[test]
fn synth_and_train_are_reproducible() {
    let dir = toy_dir();
    let d = dir.path();
    for tag in ["1", "2"] {
        ok(d, &["--config", "toy.json", "synth", "--out", &format!("c{tag}.jsonl")]);
        ok(d, &["--config", "toy.json", "train", "--corpus", &format!("c{tag}.jsonl"), "--out", &format!("m{tag}.fmdl")]);
    }
    assert_eq!(fs::read(d.join("c1.jsonl")).unwrap(), fs::read(d.join("c2.jsonl")).unwrap());
    assert_eq!(fs::read(d.join("m1.fmdl")).unwrap(), fs::read(d.join("m2.fmdl")).unwrap());

    // a different seed changes the corpus
    ok(d, &["--config", "toy.json", "--seed", "12", "synth", "--out", "c3.jsonl"]);
    assert_ne!(fs::read(d.join("c1.jsonl")).unwrap(), fs::read(d.join("c3.jsonl")).unwrap());
}
