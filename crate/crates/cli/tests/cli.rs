use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mmfkey"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Data rows of a CSV table, keyed by the header.
fn csv_rows(text: &str) -> Vec<Vec<(String, String)>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines
        .map(|l| {
            header
                .iter()
                .cloned()
                .zip(l.split(',').map(String::from))
                .collect()
        })
        .collect()
}

fn field(row: &[(String, String)], name: &str) -> f64 {
    row.iter()
        .find(|(k, _)| k == name)
        .unwrap()
        .1
        .parse()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn baseline_report_matches_the_long_haul_link() {
    let o = run(&[
        "report",
        "--config",
        config("baseline.toml").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("# mmfkey-cli "), "{first}");
    assert!(
        first.contains("seed=2024") && first.contains("params=sha256:"),
        "{first}"
    );
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 1);
    assert!((field(&rows[0], "qer_secure") - 0.12).abs() <= 0.01);
    assert!(field(&rows[0], "qer_interception") > 0.9);
    assert!((field(&rows[0], "h_bob") - 5.1).abs() < 0.05);
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "seed = 1\n\n[fiber]\nn_modez = 30\n");
    let o = run(&["report", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("n_modez") && err.contains("line 4"), "{err}");
}

#[test]
fn missing_seed_and_missing_config_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "[fiber]\nn_modes = 30\n");
    let o = run(&["report", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("seed"));
    assert_eq!(code(&run(&["report"])), 1);
    assert_eq!(
        code(&run(&[
            "figure",
            "4x",
            "--config",
            config("minimal.toml").to_str().unwrap()
        ])),
        1
    );
}

#[test]
fn figure_tables_are_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("desk_detection.toml");
    let table = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = run(&[
            "figure",
            "2c",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(out).unwrap()
    };
    let a = table("a.csv", "5");
    let b = table("b.csv", "5");
    let c = table("c.csv", "6");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert!(text.lines().next().unwrap().contains("seed=5"));
    let row = csv_rows(&text)
        .into_iter()
        .find(|r| field(r, "mu2") == 20.0)
        .unwrap();
    let analytic = field(&row, "p_analytic");
    assert!((analytic - 0.560).abs() < 0.001, "{analytic}");
    assert!((field(&row, "p_mc") - analytic).abs() < 3.0 * field(&row, "p_mc_stderr"));
}

#[test]
fn error_rate_figure_as_json() {
    let o = run(&[
        "figure",
        "3d",
        "--config",
        config("baseline.toml").to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["provenance"]["seed"], 2024);
    let rows = doc["rows"].as_array().unwrap();
    let row = rows
        .iter()
        .find(|r| r["length_km"] == 220.0 && r["mu2"] == 1.0)
        .unwrap();
    assert!((row["qer_secure"].as_f64().unwrap() - 0.12).abs() <= 0.01);
    assert!(rows
        .iter()
        .all(|r| r["qer_interception"].as_f64().unwrap() > 0.9));
}

#[test]
fn eve_fidelity_figure_cell() {
    let o = run(&[
        "figure",
        "3a",
        "--config",
        config("minimal.toml").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    let row = rows
        .iter()
        .find(|r| field(r, "mu2") == 10.0 && field(r, "n_modes") == 5000.0)
        .unwrap();
    assert!((field(row, "beta2") - 9.99e-4).abs() < 1e-6);
}

#[test]
fn honest_session_releases_a_key_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("session_honest.toml");
    let go = |name: &str| {
        let out = dir.path().join(name);
        let o = run(&[
            "session",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    };
    let a = go("a");
    let b = go("b");
    for file in ["transcript.jsonl", "summary.json"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "released");
    assert!(summary["key_length"].as_u64().unwrap() > 0);
    assert!(summary["security_report"]["h_bob"].as_f64().unwrap() > 0.0);

    let replay = run(&[
        "session",
        "--replay",
        a.join("transcript.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(code(&replay), 0);
    let replayed: serde_json::Value = serde_json::from_str(&stdout(&replay)).unwrap();
    assert_eq!(replayed["key_length"], summary["key_length"]);
    assert_eq!(replayed["qer_estimate"], summary["qer_estimate"]);
}

#[test]
fn intercepted_session_exits_with_abort_and_keeps_its_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eve");
    let o = run(&[
        "session",
        "--config",
        config("eve_communication.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "aborted");
    assert!(summary["qer_estimate"].as_f64().unwrap() > 0.9);
    assert!(out.join("transcript.jsonl").exists());
}

#[test]
fn calibration_attack_is_reported_by_calibrate() {
    let o = run(&[
        "calibrate",
        "--config",
        config("eve_calibration.toml").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stdout(&o).contains("verdict attacked"));
}

#[test]
fn report_sweep_has_one_row_per_value() {
    let o = run(&[
        "report",
        "--config",
        config("sweep_length.toml").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 6);
    let q: Vec<f64> = rows.iter().map(|r| field(r, "qer_secure")).collect();
    assert!(q.windows(2).all(|w| w[0] <= w[1]), "{q:?}");
    assert!((q[5] - 0.12).abs() <= 0.01);
}

#[test]
fn session_refuses_a_sweep() {
    let o = run(&[
        "session",
        "--config",
        config("sweep_length.toml").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn malformed_transcript_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    fs::write(&path, "{\"entry\":\"nonsense\"}\n").unwrap();
    let o = run(&["session", "--replay", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}
