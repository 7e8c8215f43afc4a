use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dpnsim");

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

fn dpnsim(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shipped_reference_network_validates() {
    let out = dpnsim(&["validate", "--model", s(&data("r1.json"))]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn invalid_model_reports_path_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(data("r1.json"))
        .unwrap()
        .replacen("0.7", "0.75", 1);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, text).unwrap();
    let out = dpnsim(&["validate", "--model", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("transition[0].table[0]"), "{err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = dpnsim(&[
        "run",
        "--model",
        "r1",
        "--algorithm",
        "lw",
        "--evidence",
        "x.json",
        "--seed",
        "1",
        "--fast",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = dpnsim(&[
        "run",
        "--model",
        "r1",
        "--algorithm",
        "lw",
        "--evidence",
        "x.json",
    ]);
    assert_eq!(out.status.code(), Some(1), "seed is mandatory");
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let (model, evidence) = (data("r1.json"), data("r1_evidence.json"));
    let args = [
        "run",
        "--algorithm",
        "ersof",
        "--model",
        s(&model),
        "--evidence",
        s(&evidence),
        "--samples",
        "100",
        "--seed",
        "7",
    ];
    let a = dpnsim(&args);
    let b = dpnsim(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).starts_with("t,variable,value,estimate,extinct\n"));
}

#[test]
fn experiment_writes_series_and_cross_section() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.json");
    std::fs::write(
        &config,
        format!(
            r#"{{"model": "{}", "algorithms": ["lw", "ersof"], "sample_counts": [10, 20], "horizon": 5, "runs": 3, "master_seed": 9}}"#,
            s(&data("r1.json"))
        ),
    )
    .unwrap();
    let out_csv = dir.path().join("results.csv");
    let cs = dir.path().join("cs.csv");
    let out = dpnsim(&[
        "experiment",
        "--config",
        s(&config),
        "--out",
        s(&out_csv),
        "--cross-section",
        s(&cs),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&out_csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("algorithm,n_samples,t,mean_abs_error,stderr,extinct_fraction")
    );
    assert_eq!(lines.count(), 2 * 2 * 6);
    let cs = std::fs::read_to_string(&cs).unwrap();
    assert_eq!(
        cs.lines().next(),
        Some("algorithm,n_samples,mean_abs_error_at_T,stderr")
    );
    assert_eq!(cs.lines().count(), 5);
}

#[test]
fn shipped_experiment_configs_parse() {
    for name in ["full.json", "desk.json"] {
        let text = std::fs::read_to_string(data(name)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["model"], "r1.json");
        assert_eq!(v["runs"], 50);
        assert_eq!(v["horizon"], 50);
    }
}

#[test]
fn simulate_round_trips_through_run_and_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ev = dir.path().join("e.json");
    let truth = dir.path().join("x.json");
    let out = dpnsim(&[
        "simulate",
        "--model",
        "r1",
        "--horizon",
        "6",
        "--seed",
        "3",
        "--out",
        s(&ev),
        "--truth",
        s(&truth),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let exact = dpnsim(&["exact", "--model", "r1", "--evidence", s(&ev)]);
    assert_eq!(exact.status.code(), Some(0));
    assert_eq!(
        String::from_utf8_lossy(&exact.stdout).lines().count(),
        1 + 7 * 4
    );
    let truth: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(&truth).unwrap()).unwrap();
    assert_eq!(truth.len(), 7);
}
