use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fixture(rel: &str) -> String {
    fixtures().join(rel).to_string_lossy().into_owned()
}

fn tutorflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tutorflow"))
        .args(args)
        .env_remove("OPENAI_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Errors are one JSON object on one line.
fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.trim();
    assert_eq!(line.lines().count(), 1, "stderr: {stderr}");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {line}"))
}

fn write(dir: &Path, name: &str, contents: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path.to_string_lossy().into_owned()
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn validate_prints_plan_order() {
    let out = tutorflow(&["validate", &fixture("workflows/ms_w_example_final.json")]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().next(), Some("markscheme → llm_feedback → regraded"));
    assert!(text.contains("precomputable: markscheme"));
}

#[test]
fn validate_reports_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"directives": {"a": "{b}", "b": "{a}"}}"#);
    let out = tutorflow(&["validate", &bad]);
    assert!(!out.status.success());
    let err = error_json(&out);
    assert!(matches!(err["error"].as_str(), Some("config" | "plan")), "{err}");
}

#[test]
fn run_without_submission_is_a_usage_error() {
    let out = tutorflow(&[
        "run",
        &fixture("workflows/ms_w_example_final.json"),
        "--question",
        "q.txt",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"], "usage");
    assert!(err["message"].as_str().unwrap().contains("--submission"));
}

#[test]
fn unknown_subcommand_and_provider() {
    let out = tutorflow(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
    let out = tutorflow(&["--provider", "psychic", "validate", &fixture("workflows/baseline.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn live_provider_without_key_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let q = write(dir.path(), "q.txt", "Show 1 < 2.");
    let s = write(dir.path(), "s.txt", "Obvious.");
    let out = tutorflow(&[
        "--provider",
        "live",
        "run",
        &fixture("workflows/baseline.json"),
        "--question",
        &q,
        "--submission",
        &s,
    ]);
    assert!(!out.status.success());
    let err = error_json(&out);
    assert_eq!(err["error"], "provider");
    assert!(err["message"].as_str().unwrap().contains("OPENAI_API_KEY"));
}

#[test]
fn run_with_mock_prints_feedback_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let q = write(dir.path(), "q.txt", "Prove that 7 is prime.");
    let s = write(dir.path(), "s.txt", "It has no divisor between 2 and 6.");
    let trace = dir.path().join("trace.json");
    let out = tutorflow(&[
        "run",
        &fixture("workflows/ms_w_example_final.json"),
        "--question",
        &q,
        "--submission",
        &s,
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("MOCK:llm_feedback:"));
    let trace: Value = serde_json::from_str(&fs::read_to_string(trace).unwrap()).unwrap();
    let steps = trace["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 3);
    assert!(steps.iter().all(|s| s["latency_ms"] == 0));
}

#[test]
fn budget_exhaustion_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let fixture_path = write(
        dir.path(),
        "scripted.json",
        r#"{"default": {"text": "reply", "prompt_tokens": 1000, "completion_tokens": 1000}}"#,
    );
    let q = write(dir.path(), "q.txt", "Question");
    let s = write(dir.path(), "s.txt", "Answer");
    let out = tutorflow(&[
        "--provider",
        &format!("scripted:{fixture_path}"),
        "--costs",
        &fixture("costs.json"),
        "--budget",
        "0.005",
        "run",
        &fixture("workflows/ms_w_example_final.json"),
        "--question",
        &q,
        "--submission",
        &s,
    ]);
    assert!(!out.status.success());
    assert_eq!(error_json(&out)["error"], "budget");
}

#[test]
fn sweep_writes_one_row_per_combo_and_grader() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let out = tutorflow(&["sweep", &fixture("sweeps/mock.json"), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("combos.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("workflow,feedback_model,grading_model"));
    // 2 workflows x 2 feedback models x 2 graders
    assert_eq!(lines.count(), 8);
    assert!(out_dir.join("robustness.md").exists());
    assert_eq!(snapshot(&out_dir.join("traces")).len(), 2 * 2 * 10);

    let report = tutorflow(&["report", out_dir.to_str().unwrap(), "--format", "csv"]);
    assert!(report.status.success());
    assert!(out_dir.join("robustness.csv").exists());
}

#[test]
fn sweep_output_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str, jobs: &str| {
        let out_dir = dir.path().join(name);
        let out = tutorflow(&[
            "--seed",
            seed,
            "--jobs",
            jobs,
            "sweep",
            &fixture("sweeps/mock.json"),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        snapshot(&out_dir)
    };
    let a = run("a", "7", "1");
    let b = run("b", "7", "4");
    let c = run("c", "8", "4");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn batch_writes_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("batch");
    let out = tutorflow(&[
        "batch",
        &fixture("workflows/systematic5.0.json"),
        &fixture("datasets/sweep10"),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Vec<Value> =
        serde_json::from_str(&fs::read_to_string(out_dir.join("batch.json")).unwrap()).unwrap();
    assert_eq!(summary.len(), 10);
    assert_eq!(summary[0]["id"], "s01");
    assert!(summary.iter().all(|r| r["error"].is_null()));
    assert_eq!(snapshot(&out_dir.join("traces")).len(), 10);
}

#[test]
fn precompute_then_override_then_run() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let cache_arg = cache.to_str().unwrap();
    let config = fixture("workflows/ms_w_example_final.json");
    let questions = fixture("questions/sample.tex");

    let out = tutorflow(&["--cache-dir", cache_arg, "precompute", &config, &questions]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|l| l["status"] == "ready" && l["new_cache_entries"] == 1));

    let again = tutorflow(&["--cache-dir", cache_arg, "precompute", &config, &questions]);
    assert!(stdout(&again).lines().all(|l| l.contains("\"new_cache_entries\":0")));

    let edited = write(dir.path(), "markscheme.txt", "Instructor-written mark scheme.");
    let out = tutorflow(&[
        "--cache-dir",
        cache_arg,
        "cache",
        "set",
        &config,
        "markscheme",
        &edited,
        "--question-set",
        &questions,
        "--question-id",
        "sqrt2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let q = write(
        dir.path(),
        "q.txt",
        "Prove that $\\sqrt{2}$ is irrational.\n\nYou may use that every integer has a unique prime factorisation.",
    );
    let s = write(dir.path(), "s.txt", "Suppose sqrt 2 = p/q.");
    let trace = dir.path().join("trace.json");
    let out = tutorflow(&[
        "--cache-dir",
        cache_arg,
        "run",
        &config,
        "--question",
        &q,
        "--submission",
        &s,
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace: Value = serde_json::from_str(&fs::read_to_string(trace).unwrap()).unwrap();
    let markscheme = &trace["steps"][0];
    assert_eq!(markscheme["name"], "markscheme");
    assert_eq!(markscheme["cache_hit"], true);
    assert_eq!(markscheme["raw_response"], "Instructor-written mark scheme.");
    assert!(trace["steps"][1]["resolved_prompt"]
        .as_str()
        .unwrap()
        .contains("Instructor-written mark scheme."));
}

#[test]
fn cache_set_needs_a_cache_dir_and_a_precomputable_node() {
    let dir = tempfile::tempdir().unwrap();
    let text = write(dir.path(), "t.txt", "x");
    let q = write(dir.path(), "q.txt", "question");
    let config = fixture("workflows/ms_w_example_final.json");
    let out = tutorflow(&["cache", "set", &config, "markscheme", &text, "--question", &q]);
    assert_eq!(error_json(&out)["error"], "usage");

    let cache = dir.path().join("c");
    let out = tutorflow(&[
        "--cache-dir",
        cache.to_str().unwrap(),
        "cache",
        "set",
        &config,
        "llm_feedback",
        &text,
        "--question",
        &q,
    ]);
    assert!(!out.status.success());
    assert_eq!(error_json(&out)["error"], "engine");
}
