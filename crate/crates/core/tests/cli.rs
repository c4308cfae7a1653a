use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdcontrol"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn simulate_first_row_is_initial_condition() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"scenario": "wave_steering", "overrides": {"sigma": 0.0}, "grid": {"n_steps": 20}}"#,
    );
    let out = tmp.path().join("sim");
    assert!(run(&["simulate", &cfg, "--out", out.to_str().unwrap()])
        .status
        .success());
    let data =
        rdcontrol::io::read_time_series(std::fs::File::open(out.join("path_0000.csv")).unwrap())
            .unwrap();
    let grid = data.domain.grid().unwrap();
    assert_eq!((grid.x_min, grid.x_max, grid.n_cells), (0.0, 20.0, 401));
    for (i, v) in data.rows[0].iter().enumerate() {
        let x = grid.node(i);
        let expected = 1.0 / (1.0 + (-(std::f64::consts::SQRT_2 / 2.0) * (x - 5.0)).exp());
        assert!((v - expected).abs() < 1e-15);
    }
    assert_eq!(data.times[0], 0.0);
    assert_eq!(data.rows.len(), 21);
}

#[test]
fn simulate_many_paths_lists_every_stream() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"scenario": "unstable_state", "grid": {"n_cells": 16, "n_steps": 300}}"#,
    );
    let out = tmp.path().join("sim");
    assert!(run(&[
        "simulate",
        &cfg,
        "--paths",
        "100",
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap()
    ])
    .status
    .success());
    let csvs: Vec<Vec<u8>> = (0..100)
        .map(|i| std::fs::read(out.join(format!("path_{i:04}.csv"))).unwrap())
        .collect();
    let mut unique = csvs.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), 100);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["streams"].as_array().unwrap().len(), 100);
    assert_eq!(summary["config"]["seed"], 4);
    assert_eq!(summary["blowup_count"], 0);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    let bad = write_config(
        tmp.path(),
        "bad.json",
        r#"{"scenario": "wave_steering", "grid": {"n_cels": 10}}"#,
    );
    assert_eq!(
        run(&["simulate", &bad, "--out", out]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["simulate", "/nonexistent/config.json", "--out", out])
            .status
            .code(),
        Some(2)
    );

    let wild = write_config(
        tmp.path(),
        "wild.json",
        r#"{"scenario": "unstable_state", "grid": {"n_cells": 16, "n_steps": 5}, "noise": {"sigma": 100.0}}"#,
    );
    let res = run(&["simulate", &wild, "--paths", "4", "--out", out]);
    assert_eq!(
        res.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert!(String::from_utf8_lossy(&res.stderr).contains("stream"));

    let ok = write_config(
        tmp.path(),
        "ok.json",
        r#"{"scenario": "wave_steering", "grid": {"n_cells": 32, "n_steps": 50}, "overrides": {"n_paths": 4}}"#,
    );
    assert_eq!(
        run(&["gradcheck", &ok, "--directions", "2"]).status.code(),
        Some(0)
    );
    assert_eq!(
        run(&[
            "gradcheck",
            &ok,
            "--directions",
            "2",
            "--mismatched-quadrature"
        ])
        .status
        .code(),
        Some(4)
    );
}

#[test]
fn gradcheck_penalty_only_is_at_roundoff() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"scenario": "unstable_state", "grid": {"n_cells": 32, "n_steps": 50},
            "cost": {"c_terminal": 0.0, "lambda": 1.0}, "overrides": {"n_paths": 3}}"#,
    );
    let report = tmp.path().join("r.json");
    assert!(run(&["gradcheck", &cfg, "--out", report.to_str().unwrap()])
        .status
        .success());
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(doc["report"]["max_fd_error"].as_f64().unwrap() < 1e-10);
}

#[test]
fn optimize_writes_history_control_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"scenario": "unstable_state", "grid": {"n_cells": 32, "n_steps": 100},
            "overrides": {"n_paths": 16}, "cg": {"max_iters": 5}, "seed": 3}"#,
    );
    let out = tmp.path().join("opt");
    assert!(run(&["optimize", &cfg, "--out", out.to_str().unwrap()])
        .status
        .success());
    let history = std::fs::read_to_string(out.join("history.jsonl")).unwrap();
    let keys = [
        "accepted",
        "beta",
        "cost",
        "forced",
        "grad_norm",
        "iteration",
        "std_error",
        "step",
    ];
    for line in history.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let mut found: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        found.sort();
        assert_eq!(found, keys);
    }
    assert_eq!(history.lines().count(), 5);
    let control =
        rdcontrol::io::read_time_series(std::fs::File::open(out.join("control.csv")).unwrap())
            .unwrap();
    assert_eq!(control.rows.len(), 100);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    let h = &summary["holdout"];
    assert!(h["final"]["total"].as_f64().unwrap() < h["initial"]["total"].as_f64().unwrap());
    // the echoed configuration reproduces the run
    let echo = tmp.path().join("echo.json");
    std::fs::write(&echo, serde_json::to_vec(&summary["config"]).unwrap()).unwrap();
    let out2 = tmp.path().join("opt2");
    assert!(run(&[
        "optimize",
        echo.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap()
    ])
    .status
    .success());
    for f in ["history.jsonl", "control.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(out.join(f)).unwrap(),
            std::fs::read(out2.join(f)).unwrap(),
            "{f}"
        );
    }
}
