use std::fs;
use std::process::{Command, Output};

const SMALL: [&str; 10] = [
    "--set",
    "grid.n_z=12",
    "--set",
    "grid.n_detuning=96",
    "--set",
    "grid.span_sigmas=12",
    "--set",
    "pulse.duration_ns=100",
    "--set",
    "detection.trials=80000",
];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crib-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut all = args.to_vec();
    all.extend(SMALL);
    all
}

#[test]
fn sequence_check_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let result = run(&["sequence-check", "--out", out]);
    assert!(result.status.success());
    let csv = fs::read_to_string(dir.path().join("sequence-check_sequence.csv")).unwrap();
    assert!(csv.starts_with("storage_end_ms,zeeman_slack_ms"));
    let summary: serde_json::Value = serde_json::from_slice(&result.stdout).unwrap();
    assert_eq!(summary["ok"], true);

    let flagged = run(&[
        "sequence-check",
        "--out",
        out,
        "--set",
        "sequence.repetition_rate_hz=5",
    ]);
    assert_eq!(flagged.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&flagged.stdout).unwrap();
    assert_eq!(summary["ok"], false);
}

#[test]
fn config_errors_exit_2() {
    let bad_key = run(&["simulate", "--set", "profile.d_peek=0.3"]);
    assert_eq!(bad_key.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("d_peek"));

    let bad_value = run(&["simulate", "--set", "detection.transmission=1.5"]);
    assert_eq!(bad_value.status.code(), Some(2));

    let missing = run(&["simulate", "--config", "/nonexistent/run.toml"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn failed_fit_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = with_small(&[
        "decay-scan",
        "--out",
        out,
        "--set",
        "decay.storage_times_ns=[100, 200]",
    ]);
    assert_eq!(run(&args).status.code(), Some(3));
}

#[test]
fn simulate_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for (name, seed) in [("a", "4"), ("b", "4"), ("c", "5")] {
        let out = dir.path().join(name);
        let args = with_small(&["simulate", "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(run(&args).status.success());
        bytes.push(fs::read(out.join("echo-histogram_histogram.csv")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    assert_ne!(bytes[0], bytes[2]);
}

#[test]
fn fit_decay_from_file_and_json_output() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.csv");
    fs::write(
        &points,
        "storage_time_ns,efficiency\n100,1.8e-3\n200,1.5e-3\n300,1.0e-3\n400,6.0e-4\n",
    )
    .unwrap();
    let out = dir.path().join("fit");
    let result = run(&[
        "fit-decay",
        "--input",
        points.to_str().unwrap(),
        "--format",
        "json",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("fit-decay.json")).unwrap()).unwrap();
    assert_eq!(v["tables"][0]["columns"][2], "fit_value");
    assert!(v["summary"]["decay_time_ns"].as_f64().unwrap() > 0.0);
}

#[test]
fn config_file_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        "seed = 9\n\n[grid]\nn_z = 12\nn_detuning = 96\nspan_sigmas = 12.0\n\n[pulse]\nduration_ns = 100.0\n\n[detection]\ntrials = 80000\n",
    )
    .unwrap();
    let out = dir.path().join("plots");
    let result = run(&[
        "no-peak-control",
        "--config",
        config.to_str().unwrap(),
        "--format",
        "svg",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let svg = fs::read_to_string(out.join("no-peak-control_histogram.svg")).unwrap();
    assert!(svg.contains("<polyline"));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("no-peak-control_meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["seed"], 9);
}

#[test]
fn unknown_format_rejected_by_parser() {
    let result = run(&["simulate", "--format", "xml"]);
    assert_eq!(result.status.code(), Some(2));
}
