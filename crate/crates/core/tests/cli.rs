mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::sample_dir;

fn termlink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_termlink")).args(args).output().unwrap()
}

fn sample(name: &str) -> String {
    sample_dir().join(name).display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_error_line(o: &Output) -> String {
    assert!(!o.status.success());
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error: ")).collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    lines[0].to_string()
}

#[test]
fn help_lists_documented_flags() {
    let cases: &[(&[&str], &[&str])] = &[
        (&["mine-dict", "--help"], &["--in", "--out", "--n", "--surfaces", "--top", "--dict-out"]),
        (&["tag", "--help"], &["--dict", "--in", "--out", "--iterations", "--merge-policy", "--no-repair", "--preposition", "--tagger-cmd"]),
        (&["relate", "--help"], &["--in", "--out", "--patterns", "--sample-rate", "--max-distance", "--seed", "--emit-no-relation"]),
        (&["link", "--help"], &["--kb", "--emb", "--in", "--out", "--mode", "--threshold", "--context", "--max-ngram"]),
        (&["evaluate", "--help"], &["--gold", "--pred", "--report", "--labels", "--micro"]),
        (&["pipeline", "--help"], &["--config", "--set", "--stages", "--seed", "--out-dir"]),
        (&["kb", "--help"], &["validate", "stats"]),
        (&["--help"], &["mine-dict", "tag", "relate", "link", "evaluate", "pipeline", "kb", "--split-hyphens"]),
    ];
    for (args, flags) in cases {
        let o = termlink(args);
        assert!(o.status.success());
        let text = String::from_utf8_lossy(&o.stdout);
        for f in *flags {
            assert!(text.contains(f), "{args:?} help lacks {f}");
        }
    }
}

#[test]
fn failures_print_one_error_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x.jsonl").display().to_string();
    let line = assert_error_line(&termlink(&["tag", "--dict", "/nonexistent/dict.txt", "--in", &sample("corpus.jsonl"), "--out", &out]));
    assert!(line.contains("/nonexistent/dict.txt"), "{line}");

    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\":\"a\",\"text\":\"x\"}\n{broken\n").unwrap();
    let line = assert_error_line(&termlink(&["relate", "--in", bad.to_str().unwrap(), "--out", &out]));
    assert!(line.contains("line 2"), "{line}");

    let line = assert_error_line(&termlink(&["link", "--kb", &sample("kb.jsonl"), "--in", &sample("gold.jsonl"), "--out", &out]));
    assert!(line.contains("--emb"), "{line}");
}

#[test]
fn subcommands_chain_on_the_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| tmp.path().join(n).display().to_string();

    let o = termlink(&["mine-dict", "--in", &sample("corpus.jsonl"), "--out", &p("ranked.tsv"), "--top", "10", "--dict-out", &p("top.txt")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ranked = fs::read_to_string(p("ranked.tsv")).unwrap();
    assert!(ranked.lines().all(|l| l.split('\t').count() == 4));
    assert_eq!(fs::read_to_string(p("top.txt")).unwrap().lines().count(), 10);

    let steps: [&[&str]; 3] = [
        &["tag", "--dict", &sample("dict.txt"), "--in", &sample("corpus.jsonl"), "--out", &p("t.jsonl")],
        &["relate", "--in", &p("t.jsonl"), "--out", &p("r.jsonl")],
        &["link", "--kb", &sample("kb.jsonl"), "--emb", &sample("emb.txt"), "--in", &p("r.jsonl"), "--out", &p("l.jsonl"), "--threshold", "-1"],
    ];
    for args in steps {
        let o = termlink(args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }

    for what in ["terms", "relations", "links"] {
        let report = p(&format!("{what}.json"));
        let o = termlink(&["evaluate", what, "--gold", &sample("gold.jsonl"), "--pred", &p("l.jsonl"), "--report", &report]);
        assert!(o.status.success(), "{what}: {}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
        assert!(v.is_object());
    }
    let o = termlink(&["evaluate", "relations", "--gold", &sample("gold.jsonl"), "--pred", &p("l.jsonl"), "--labels", "PART-OF,BOGUS"]);
    assert_error_line(&o);

    let o = termlink(&["kb", "stats", "--kb", &sample("kb.jsonl")]);
    assert!(o.status.success());
    let stats: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["entities"], 20);
    assert_eq!(stats["disambiguation_pages"], 1);
    let o = termlink(&["kb", "validate", "--kb", &sample("kb.jsonl"), "--emb", &sample("emb.txt")]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn read_lines(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn stage_filter_limits_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = termlink(&[
        "pipeline",
        "--config",
        &sample("config.toml"),
        "--stages",
        "tag",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["annotations.jsonl", "tagged.jsonl"]);
    for doc in read_lines(&out.join("annotations.jsonl")) {
        assert!(!doc["terms"].as_array().unwrap().is_empty());
        assert!(doc["relations"].as_array().unwrap().is_empty());
        assert!(doc["links"].as_array().unwrap().is_empty());
    }
}

#[test]
fn overrides_and_missing_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = termlink(&[
        "pipeline",
        "--config",
        &sample("config.toml"),
        "--set",
        "kb=/nonexistent/kb.jsonl",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    let line = assert_error_line(&o);
    assert!(line.contains("kb"), "{line}");
    assert!(!out.exists(), "validation must precede any work");

    let o = termlink(&["pipeline", "--config", &sample("config.toml"), "--set", "colour=blue"]);
    let line = assert_error_line(&o);
    assert!(line.contains("colour"), "{line}");

    let o = termlink(&[
        "pipeline",
        "--config",
        &sample("config.toml"),
        "--set",
        "link_mode=baseline",
        "--set",
        "stages=[\"tag\", \"link\", \"evaluate\"]",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics.get("relations").is_none());
    assert!(metrics["links"]["accuracy"].as_f64().is_some());
}

#[test]
fn failed_stage_keeps_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let kb = tmp.path().join("kb.jsonl");
    fs::write(&kb, "{\"qid\": \"Q1\", \"name\": \"x\"}\n{\"qid\": \"oops\", \"name\": \"y\"}\n").unwrap();
    let out = tmp.path().join("out");
    let o = termlink(&[
        "pipeline",
        "--config",
        &sample("config.toml"),
        "--set",
        &format!("kb={:?}", kb.display().to_string()),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    let line = assert_error_line(&o);
    assert!(line.contains("stage link failed"), "{line}");
    assert!(line.contains("line 2"), "{line}");
    assert!(out.join("tagged.jsonl.partial").exists());
    assert!(out.join("relations.jsonl.partial").exists());
    assert!(!out.join("tagged.jsonl").exists());
    assert!(!out.join("annotations.jsonl").exists());
}
