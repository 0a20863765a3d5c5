use std::io::Write;
use std::process::{Command, Output, Stdio};

use driftguard::cli::parse_detect_output;

fn driftguard(args: &[&str], stdin: &str) -> Output {
    driftguard_with_env(args, stdin, &[])
}

fn driftguard_with_env(args: &[&str], stdin: &str, env: &[(&str, &str)]) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_driftguard"))
        .args(args)
        .env_remove("DRIFTGUARD_LOG")
        .envs(env.iter().copied())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    // A child that rejects its arguments may exit before reading stdin.
    if let Err(e) = child.stdin.take().unwrap().write_all(stdin.as_bytes()) {
        assert_eq!(e.kind(), std::io::ErrorKind::BrokenPipe);
    }
    child.wait_with_output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

#[test]
fn constant_predictor_alarms_every_fifth_line() {
    let input = "7.25\n".repeat(20);
    let out = driftguard(
        &[
            "detect",
            "--predictor",
            "const",
            "--procedure",
            "rs",
            "--threshold",
            "5",
        ],
        &input,
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        stdout(&out),
        "{\"k\":1,\"sigma\":5}\n{\"k\":2,\"sigma\":10}\n{\"k\":3,\"sigma\":15}\n\
         {\"k\":4,\"sigma\":20}\n{\"n\":20,\"A_n\":4,\"freq\":0.2}\n"
    );
}

#[test]
fn constant_predictor_musuc_is_silent() {
    let input = "7.25\n".repeat(20);
    let out = driftguard(
        &[
            "detect",
            "--predictor",
            "const",
            "--procedure",
            "musuc",
            "--threshold",
            "5",
        ],
        &input,
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "{\"n\":20,\"A_n\":0,\"freq\":0.0}\n");
}

#[test]
fn empty_input_reports_zero_observations() {
    for format in ["csv", "jsonl"] {
        let out = driftguard(&["detect", "--format", format], "");
        assert_eq!(out.status.code(), Some(0));
        assert_eq!(stdout(&out), "{\"n\":0,\"A_n\":0,\"freq\":0.0}\n");
    }
}

#[test]
fn file_input_and_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    let output = dir.path().join("out.jsonl");
    let records: String = (0..12)
        .map(|i| format!("{{\"x\":[{i},{}]}}\n", i * i))
        .collect();
    std::fs::write(&input, records).unwrap();
    let out = driftguard(
        &[
            "detect",
            "--input",
            input.to_str().unwrap(),
            "--format",
            "jsonl",
            "--columns",
            "1",
            "--predictor",
            "dist-mean",
            "--threshold",
            "2",
            "--output",
            output.to_str().unwrap(),
        ],
        "",
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).is_empty());
    let (alarms, summary) =
        parse_detect_output(&std::fs::read_to_string(&output).unwrap()).unwrap();
    assert!(!alarms.is_empty());
    assert_eq!(summary.unwrap().n, 12);
}

#[test]
fn windowed_detection_runs() {
    let input: String = (0..100)
        .map(|i| format!("{}\n", (i % 5) as f64 + if i > 60 { 50.0 } else { 0.0 }))
        .collect();
    let out = driftguard(&["detect", "--window", "20", "--threshold", "3"], &input);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let (_, summary) = parse_detect_output(&stdout(&out)).unwrap();
    assert_eq!(summary.unwrap().n, 100);
}

#[test]
fn unreadable_input_exits_2() {
    let out = driftguard(&["detect", "--input", "/nonexistent/stream.csv"], "");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/stream.csv"));
}

#[test]
fn malformed_record_fails_with_line_number() {
    let out = driftguard(
        &["detect", "--predictor", "const", "--threshold", "2"],
        "1\n2\nthree\n4\n",
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
    // The alarm at step 2 was already emitted.
    assert_eq!(stdout(&out), "{\"k\":1,\"sigma\":2}\n");
}

#[test]
fn malformed_records_can_be_skipped_with_a_warning() {
    let out = driftguard_with_env(
        &[
            "detect",
            "--on-bad-record",
            "skip",
            "--predictor",
            "const",
            "--threshold",
            "2",
        ],
        "x\n1\n2\nthree\n4\nnan\n",
        &[("DRIFTGUARD_LOG", "warn")],
    );
    assert_eq!(out.status.code(), Some(0));
    let (alarms, summary) = parse_detect_output(&stdout(&out)).unwrap();
    assert_eq!(alarms.len(), 1);
    assert_eq!(summary.unwrap().n, 3);
    assert!(stderr(&out).contains("skipping line 4"), "{}", stderr(&out));
    assert!(stderr(&out).contains("skipping line 6"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["detect", "--threshold", "1"],
        vec!["detect", "--k", "0"],
        vec!["detect", "--window", "0"],
        vec!["detect", "--procedure", "cusum"],
        vec!["detect", "--columns", "missing"],
        vec!["validate", "--trials", "0"],
        vec!["validate", "--threshold", "1", "--trials", "2", "--n", "10"],
        vec!["validate", "--pre", "gaussian:0", "--trials", "2"],
        vec!["bench-delay", "--post", "gaussian:5,1"],
        vec!["bench-delay", "--change", "50"],
        vec![
            "bench-delay",
            "--change",
            "5000",
            "--post",
            "gaussian:5,1",
            "--n",
            "100",
        ],
    ] {
        let out = driftguard(&args, "1\n2\n");
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
        assert!(!stderr(&out).is_empty(), "{args:?}");
    }
}

#[test]
fn validate_passes_under_the_null() {
    let dir = tempfile::tempdir().unwrap();
    let freq = dir.path().join("freq.csv");
    let out = driftguard(
        &[
            "validate",
            "--n",
            "2000",
            "--trials",
            "40",
            "--frequencies",
            freq.to_str().unwrap(),
        ],
        "",
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let reports: Vec<serde_json::Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(reports.len(), 2);
    for r in &reports {
        assert_eq!(r["passed"], true);
        assert_eq!(r["predictor"], "knn");
        assert_eq!(r["trials"], 40);
    }
    let rs_freq = std::fs::read_to_string(dir.path().join("freq.rs.csv")).unwrap();
    assert!(dir.path().join("freq.musuc.csv").exists());
    assert_eq!(rs_freq.lines().count(), 41);
    assert!(rs_freq.starts_with("trial,frequency\n"));
}

#[test]
fn validate_gate_fails_on_a_drifting_stream() {
    // Under a steady drift the newest point is always the farthest from the
    // mean of the others, so e-values stay near 2.
    let out = driftguard(
        &[
            "validate",
            "--pre",
            "drift:0,0.1,1",
            "--predictor",
            "dist-mean",
            "--n",
            "500",
            "--trials",
            "5",
            "--procedure",
            "rs",
        ],
        "",
    );
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(report["passed"], false);
    assert_eq!(report["exceed_fraction"], 1.0);
}

#[test]
fn bench_delay_is_deterministic_and_reports_a_median() {
    let args = [
        "bench-delay",
        "--change",
        "5",
        "--post",
        "gaussian:100,1",
        "--n",
        "400",
        "--trials",
        "20",
        "--seed",
        "11",
    ];
    let first = driftguard(&args, "");
    let second = driftguard(&args, "");
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert_eq!(first.stdout, second.stdout);
    let summary: serde_json::Value = serde_json::from_str(stdout(&first).trim()).unwrap();
    assert!(summary["median_delay"].is_number());
    assert_eq!(summary["exploratory"], true);
    assert!(summary["detected"].as_u64().unwrap() > 0);
    assert_eq!(summary["delays"].as_array().unwrap().len(), 20);
}

#[test]
fn log_level_comes_from_the_environment() {
    let input = "1\n".repeat(4);
    let quiet = driftguard(
        &["detect", "--predictor", "const", "--threshold", "2"],
        &input,
    );
    assert!(stderr(&quiet).is_empty());
    let verbose = driftguard_with_env(
        &["detect", "--predictor", "const", "--threshold", "2"],
        &input,
        &[("DRIFTGUARD_LOG", "debug")],
    );
    assert_eq!(verbose.stdout, quiet.stdout);
    assert!(
        stderr(&verbose).contains("alarm 2 at step 4"),
        "{}",
        stderr(&verbose)
    );
}
