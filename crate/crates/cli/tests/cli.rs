use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn expvolt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expvolt"))
        .current_dir(dir)
        .args(args)
        .env_remove("VO_LLM_API_KEY")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = expvolt(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    expvolt(dir, args).status.code().unwrap()
}

/// 40 days with a 10-day test split and a 16-entry store.
fn prepared() -> TempDir {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["gen-data", "--days", "40", "--out", "d.json"]);
    ok(d, &["bootstrap", "--dataset", "d.json", "--store", "s", "--test-days", "10"]);
    tmp
}

const SHORT: &[&str] = &[
    "--dataset", "d.json", "--store", "s", "--test-days", "10", "--seeds", "1", "--iterations", "2",
    "--episodes-per-iteration", "4",
];

fn train_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["train"];
    v.extend_from_slice(SHORT);
    v.extend_from_slice(extra);
    v
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["gen-data", "--seed", "7", "--days", "5", "--out", "a.json"]);
    ok(d, &["gen-data", "--seed", "7", "--days", "5", "--out", "b.json"]);
    ok(d, &["gen-data", "--seed", "8", "--days", "5", "--out", "c.json"]);
    let a = fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, fs::read(d.join("b.json")).unwrap());
    assert_ne!(a, fs::read(d.join("c.json")).unwrap());
}

#[test]
fn usage_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_eq!(code(d, &["gen-data", "--days", "0"]), 2);
    assert_eq!(code(d, &["train", "--dataset", "missing.json", "--store", "s"]), 2);
    assert_eq!(code(d, &["--jobs", "0", "gen-data", "--days", "1"]), 2);
    assert_eq!(code(d, &["frobnicate"]), 2);
    fs::write(d.join("bad.json"), r#"{"colour": 1}"#).unwrap();
    assert_eq!(code(d, &["train", "--config", "bad.json"]), 2);
}

#[test]
fn bootstrap_writes_k_entries_deterministically() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["gen-data", "--days", "30", "--out", "d.json"]);
    ok(d, &["bootstrap", "--dataset", "d.json", "--store", "a", "--k", "16"]);
    ok(d, &["bootstrap", "--dataset", "d.json", "--store", "b", "--k", "16"]);
    let names = |dir: &str| {
        let mut v: Vec<_> = fs::read_dir(d.join(dir))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        v.sort();
        v
    };
    let a = names("a");
    assert_eq!(a.iter().filter(|n| n.ends_with(".exp.json")).count(), 16);
    assert_eq!(a, names("b"));
    for n in &a {
        assert_eq!(fs::read(d.join("a").join(n)).unwrap(), fs::read(d.join("b").join(n)).unwrap(), "{n}");
    }
}

#[test]
fn bootstrap_with_too_few_days_fails() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["gen-data", "--days", "30", "--out", "d.json"]);
    assert_eq!(code(d, &["bootstrap", "--dataset", "d.json", "--store", "s", "--k", "40"]), 1);
    assert!(!d.join("s").join("e000001.exp.json").exists());
}

#[test]
fn remote_backend_without_key_exits_3() {
    let tmp = prepared();
    assert_eq!(code(tmp.path(), &train_args(&["--backend", "remote"])), 3);
}

#[test]
fn replay_reproduces_training_bit_exactly() {
    let tmp = prepared();
    let d = tmp.path();
    ok(d, &train_args(&["--out", "live"]));
    assert!(d.join("live/transcript.jsonl").exists());
    ok(d, &train_args(&["--out", "again", "--backend", "replay", "--transcript", "live/transcript.jsonl"]));
    for f in ["records.jsonl", "curves.csv", "stores/seed-1/manifest.json"] {
        assert_eq!(fs::read(d.join("live").join(f)).unwrap(), fs::read(d.join("again").join(f)).unwrap(), "{f}");
    }
    assert!(!d.join("again/transcript.jsonl").exists());
}

#[test]
fn ablate_prints_five_variants() {
    let tmp = prepared();
    let d = tmp.path();
    ok(d, &train_args(&["--out", "full"]));
    ok(d, &train_args(&["--out", "nor", "--variant", "nor"]));
    let table = ok(
        d,
        &[
            "ablate", "--dataset", "d.json", "--test-days", "10", "--seeds", "1", "--store", "s",
            "--full-store", "full/stores/seed-1", "--nor-store", "nor/stores/seed-1", "--out", "ab",
        ],
    );
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 5, "{table}");
    for (row, name) in rows.iter().zip(["Full", "NoC", "NoE", "NoM", "NoR"]) {
        assert!(row.starts_with(name), "{row}");
    }
    let csv = fs::read_to_string(d.join("ab/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn inspect_text_and_json() {
    let tmp = prepared();
    let d = tmp.path();
    let text = ok(d, &["inspect", "--store", "s", "--id", "e000003"]);
    for section in ["## Context", "## Reasoning", "## Actions", "## Results", "## Reward"] {
        assert!(text.contains(section), "missing {section}");
    }
    assert_eq!(text, ok(d, &["inspect", "--store", "s", "--id", "3"]));
    let json = ok(d, &["inspect", "--store", "s", "--id", "3", "--format", "json"]);
    assert_eq!(json, fs::read_to_string(d.join("s/e000003.exp.json")).unwrap());
    assert_eq!(code(d, &["inspect", "--store", "s", "--id", "e000099"]), 1);
    assert_eq!(code(d, &["inspect", "--store", "s", "--id", "x"]), 2);
}
