//! End-to-end runs of the `iloci` binary on the bundled toy corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const EXIT_CONFIG: i32 = 2;
const EXIT_MISSING_INPUT: i32 = 5;

fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy").canonicalize().unwrap()
}

/// Writes a fast toy config into `dir` and returns its path.
fn toy_config(dir: &Path, extra: &str) -> PathBuf {
    let toy = toy_dir();
    let text = format!(
        "corpus_dir = {:?}\nlabel_map = {:?}\ncache = {:?}\nout_dir = {:?}\nseed = 3\n{extra}\n\
         [preprocess]\nresample_len = 12\n\n[net]\nmax_epochs = 200\n",
        toy,
        toy.join("concepts.csv"),
        dir.join("corpus.cache"),
        dir.join("run"),
    );
    let path = dir.join("toy.toml");
    fs::write(&path, text).unwrap();
    path
}

fn iloci(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iloci")).args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn preprocess_is_reproducible_and_exports_folds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), "");
    let first = ok(iloci(&["preprocess", "--config", s(&cfg)]));
    let bytes = fs::read(tmp.path().join("corpus.cache")).unwrap();
    let second = ok(iloci(&["preprocess", "--config", s(&cfg)]));
    assert_eq!(first, second);
    assert!(first.starts_with("15 demos"), "{first}");
    assert_eq!(bytes, fs::read(tmp.path().join("corpus.cache")).unwrap());

    let run = tmp.path().join("run");
    assert!(run.join("config.toml").is_file());
    let folds: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("folds.json")).unwrap()).unwrap();
    let folds = folds.as_array().unwrap();
    assert_eq!(folds.len(), 5);
    let mut tested: Vec<&str> = folds
        .iter()
        .flat_map(|f| f["test"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()))
        .collect();
    tested.sort();
    tested.dedup();
    assert_eq!(tested.len(), 15);
}

#[test]
fn learn_and_infer_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), "");
    ok(iloci(&["preprocess", "--config", s(&cfg)]));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        ok(iloci(&["learn", "--config", s(&cfg), "--fold", "1", "--out", s(dir)]));
    }
    for name in ["mem.snapshot", "episodes.jsonl", "signal.csv", "entries.csv", "concept_names.csv", "summary.txt"] {
        let left = fs::read(a.join(name)).unwrap();
        assert!(!left.is_empty(), "{name} is empty");
        assert_eq!(left, fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    let copy = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(copy.contains("max_epochs = 200"), "{copy}");
    assert!(copy.contains(&format!("out_dir = {:?}", s(&a))), "{copy}");

    let snapshot = a.join("mem.snapshot");
    let inferred: Vec<String> = [&a, &b]
        .iter()
        .map(|dir| {
            ok(iloci(&["infer", "--config", s(&cfg), "--snapshot", s(&snapshot), "--fold", "1", "--out", s(&dir.join("inf"))]));
            fs::read_to_string(dir.join("inf/inference.csv")).unwrap()
        })
        .collect();
    assert_eq!(inferred[0], inferred[1]);
    assert_eq!(inferred[0].lines().count(), 1 + 15 - 3);

    let single = ok(iloci(&["infer", "--config", s(&cfg), "--snapshot", s(&snapshot), "--out", s(&a.join("one")), "Zig#2"]));
    assert!(single.starts_with("Zig#2 -> "), "{single}");
}

#[test]
fn eval_writes_the_report_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), "");
    ok(iloci(&["preprocess", "--config", s(&cfg)]));
    let stdout = ok(iloci(&["eval", "--config", s(&cfg)]));
    assert!(stdout.contains("over 5 completed folds"), "{stdout}");
    let run = tmp.path().join("run");
    for name in [
        "config.toml",
        "eval.json",
        "ccr.csv",
        "confusion.csv",
        "confidence.csv",
        "reward.csv",
        "pb_embedding.csv",
        "reward.svg",
        "pb_embedding.svg",
        "regenerated.svg",
        "fold0/mem.snapshot",
        "fold4/inference.csv",
    ] {
        assert!(run.join(name).is_file(), "{name} missing");
    }
    let regenerated: Vec<_> = fs::read_dir(run.join("regenerated")).unwrap().collect();
    assert!(!regenerated.is_empty());

    let before = fs::read(run.join("confusion.csv")).unwrap();
    fs::remove_file(run.join("confusion.csv")).unwrap();
    ok(iloci(&["report", "--config", s(&cfg)]));
    assert_eq!(before, fs::read(run.join("confusion.csv")).unwrap());
}

#[test]
fn seed_flag_changes_the_folds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), "");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(iloci(&["preprocess", "--config", s(&cfg), "--out", s(&a)]));
    ok(iloci(&["preprocess", "--config", s(&cfg), "--out", s(&b), "--seed", "11"]));
    assert_ne!(fs::read(a.join("folds.json")).unwrap(), fs::read(b.join("folds.json")).unwrap());
    assert!(fs::read_to_string(b.join("config.toml")).unwrap().contains("seed = 11"));
}

#[test]
fn missing_snapshot_is_missing_input() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), "");
    ok(iloci(&["preprocess", "--config", s(&cfg)]));
    let out = iloci(&["infer", "--config", s(&cfg), "--snapshot", s(&tmp.path().join("nope.snapshot"))]);
    assert_eq!(out.status.code(), Some(EXIT_MISSING_INPUT));
}

#[test]
fn missing_cache_is_missing_input() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), "");
    assert_eq!(iloci(&["learn", "--config", s(&cfg)]).status.code(), Some(EXIT_MISSING_INPUT));
    assert_eq!(iloci(&["report", "--config", s(&cfg)]).status.code(), Some(EXIT_MISSING_INPUT));
}

#[test]
fn configuration_problems_exit_with_the_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let no_labels = toy_config(tmp.path(), "");
    let text = fs::read_to_string(&no_labels).unwrap().replace("concepts.csv", "absent.csv");
    fs::write(&no_labels, text).unwrap();
    assert_eq!(iloci(&["preprocess", "--config", s(&no_labels)]).status.code(), Some(EXIT_CONFIG));

    let absent = tmp.path().join("absent.toml");
    assert_eq!(iloci(&["eval", "--config", s(&absent)]).status.code(), Some(EXIT_CONFIG));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "learn_rate = 3\n").unwrap();
    assert_eq!(iloci(&["eval", "--config", s(&bad)]).status.code(), Some(EXIT_CONFIG));

    let concept = toy_config(tmp.path(), "concepts = [\"Spiral\"]");
    assert_eq!(iloci(&["preprocess", "--config", s(&concept)]).status.code(), Some(EXIT_CONFIG));

    let cfg = toy_config(tmp.path(), "");
    ok(iloci(&["preprocess", "--config", s(&cfg)]));
    let stale = toy_config(tmp.path(), "concepts = [\"Line\", \"Zig\"]");
    assert_eq!(iloci(&["learn", "--config", s(&stale)]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(iloci(&["learn", "--config", s(&cfg), "--fold", "9"]).status.code(), Some(EXIT_CONFIG));
}
