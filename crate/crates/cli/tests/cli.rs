use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/mini")
        .join(name)
}

fn serp_audit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_serp-audit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = serp_audit(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(serp_audit(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(serp_audit(dir.path(), &["diverge", "--left", "a.tsv"]).status.code(), Some(2));
    assert_eq!(serp_audit(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = serp_audit(dir.path(), &["diverge", "--left", "missing.tsv", "--right", "also.tsv"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing.tsv"), "{err}");

    let out = serp_audit(dir.path(), &["run"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let posts = fixture("reddit_posts.ndjson");
    let index = fixture("serp_index.json");

    ok(d, &[
        "ingest",
        "--input",
        posts.to_str().unwrap(),
        "--output",
        "corpus.tsv",
        "--terms-output",
        "terms.tsv",
    ]);
    let corpus = fs::read_to_string(d.join("corpus.tsv")).unwrap();
    assert_eq!(corpus.lines().count(), 24);

    ok(d, &["sample-keywords", "--terms", "terms.tsv", "--k", "10", "--min-freq", "20"]);
    let keywords = fs::read_to_string(d.join("keywords.txt")).unwrap();
    assert_eq!(keywords.lines().count(), 10);
    assert!(d.join("keywords.json").exists());

    ok(d, &[
        "fetch-serp",
        "--keywords",
        "keywords.txt",
        "--site",
        "reddit.com",
        "--from",
        "2023-01-01",
        "--to",
        "2023-01-31",
        "--fixture",
        index.to_str().unwrap(),
        "--cache-dir",
        "cache",
        "--output",
        "serp.jsonl",
    ]);
    assert_eq!(fs::read_to_string(d.join("serp.jsonl")).unwrap().lines().count(), 10);

    ok(d, &["extract", "--input", "serp.jsonl", "--output", "serp.tsv"]);
    ok(d, &[
        "diverge",
        "--left",
        "corpus.tsv",
        "--right",
        "serp.tsv",
        "--output",
        "rtd.csv",
        "--top-k",
        "5",
        "--lists-dir",
        "lists",
    ]);
    let header: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("rtd.json")).unwrap()).unwrap();
    let total = header["total_rtd"].as_f64().unwrap();
    assert!(total > 0.0 && total < 1.0, "{total}");
    assert!(d.join("lists/promoted.csv").exists());
    assert!(d.join("lists/suppressed.csv").exists());

    fs::write(d.join("pairs.csv"), "x,y\n1,1000\n10,10000\n100,100000\n1000,1000000\n").unwrap();
    let stats = ok(d, &["stats", "--regression", "pairs.csv", "--permutations", "99"]);
    let r: serde_json::Value = serde_json::from_str(&stats).unwrap();
    assert!((r["slope"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((r["r_squared"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    let cv = ok(d, &[
        "crossval",
        "--keywords",
        "keywords.txt",
        "--serp",
        "serp.jsonl",
        "--corpus",
        "corpus.tsv",
    ]);
    let cv: serde_json::Value = serde_json::from_str(&cv).unwrap();
    assert_eq!(cv["folds"].as_array().unwrap().len(), 5);
    assert_eq!(cv["subset_size"], 8);
}

#[test]
fn run_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("audit.toml");
    let config = config.to_str().unwrap();
    ok(dir.path(), &["--config", config, "--out-dir", "out", "run"]);
    assert!(dir.path().join("out/run_log.json").exists());
    let verified = ok(dir.path(), &["--out-dir", "out", "report", "--verify"]);
    assert!(verified.starts_with("ok:"), "{verified}");
    let shown = ok(dir.path(), &["--out-dir", "out", "report"]);
    assert!(shown.contains("status: complete"));

    fs::write(dir.path().join("out/report/hexbin.csv"), "tampered\n").unwrap();
    let out = serp_audit(dir.path(), &["--out-dir", "out", "report", "--verify"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hexbin.csv"));
}
