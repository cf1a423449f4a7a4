use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnnt-ner"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

const TINY: &str = r#"
seed = 4

[data]
labeled_size = 6
unlabeled_size = 3
test_size = 2

[data.generator]
mean_length = 30.0
min_length = 10
max_length = 50

[train]
segment = [10, 20]
epochs = 1
batch_size = 3

[train.model]
hidden = 6
heads = 2
window = 3
"#;

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--bogus", "verify"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn empty_gen_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--out", "o", "gen-data", "--size", "0"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("o/corpus.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1, "header only");
    assert!(dir.path().join("o/config.toml").exists());
    assert!(dir.path().join("o/schema.toml").exists());
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--out", "o", "verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.matches("[PASS]").count(), 5);
    assert!(dir.path().join("o/verify.json").exists());
}

#[test]
fn config_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "nonsense = 3\n").unwrap();
    assert_eq!(run(dir.path(), &["--config", "bad.toml", "--out", "o", "verify"]).status.code(), Some(3));
    assert_eq!(run(dir.path(), &["--out", "o", "experiment", "no-such"]).status.code(), Some(3));
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let missing = run(dir.path(), &["--config", "tiny.toml", "--out", "o", "decode", "--model", "missing.bin"]);
    assert_eq!(missing.status.code(), Some(4));
}

#[test]
fn train_decode_eval_pseudo_label() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();
    let ok = |args: &[&str]| {
        let out = run(d, args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    ok(&["--config", "tiny.toml", "--out", "data", "gen-data", "--size", "2", "--name", "test"]);
    ok(&["--config", "tiny.toml", "--out", "run", "train", "--test", "data/test.jsonl"]);
    assert!(d.join("run/model.bin").exists());
    let curve = std::fs::read_to_string(d.join("run/curve.csv")).unwrap();
    assert!(curve.starts_with("step,nll,train_f1,test_f1\n"));
    ok(&["--config", "tiny.toml", "--out", "dec", "decode", "--model", "run/model.bin", "--data", "data/test.jsonl"]);
    assert_eq!(std::fs::read_to_string(d.join("dec/decoded.jsonl")).unwrap().lines().count(), 2);
    ok(&["--config", "tiny.toml", "--out", "ev", "eval", "--model", "run/model.bin", "--data", "data/test.jsonl"]);
    for f in ["eval-local.csv", "eval-global.csv", "eval.json", "config.toml"] {
        assert!(d.join("ev").join(f).exists(), "{f}");
    }
    ok(&["--config", "tiny.toml", "--out", "pl", "pseudo-label", "--model", "run/model.bin"]);
    assert!(d.join("pl/pseudo.jsonl").exists());
    // the resolved config reproduces the run
    ok(&["--config", "run/config.toml", "--out", "run2", "train", "--test", "data/test.jsonl"]);
    assert_eq!(std::fs::read(d.join("run/curve.csv")).unwrap(), std::fs::read(d.join("run2/curve.csv")).unwrap());
    let mut entries: Vec<String> =
        std::fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    entries.sort();
    assert_eq!(entries, ["data", "dec", "ev", "pl", "run", "run2", "tiny.toml"]);
}
