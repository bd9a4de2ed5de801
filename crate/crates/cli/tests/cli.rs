use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_cartanlab");

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

const SMALL: &str = r#"{
  "structures": [
    {"label": "flat2", "family": "flat", "dim": 2, "chart_box": [[-1, 1], [-1, 1]]},
    {"label": "randers2", "family": "randers", "dim": 2,
     "parameters": {"drift": [0.3, -0.2]}, "chart_box": [[-1, 1], [-1, 1]]}
  ],
  "params": [
    {"label": "flat", "alpha": 1.0, "beta": 2.0, "c": 0.0},
    {"label": "gen", "alpha": 1.5, "beta": 0.8, "v": "0.2*tau/(1 + tau)", "structures": ["randers2"]}
  ],
  "sampling": {"seed": 3, "point_count": 4}
}"#;

#[test]
fn verify_small_manifest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.json", SMALL);
    let out = dir.path().join("r.json");
    let o = run(&[
        "verify",
        "--manifest",
        m.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let r: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(r["summary"]["failed"], 0);
    assert_eq!(r["meta"]["seed"], 3);
    assert!(r["checks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| !c["anchor"].as_str().unwrap().is_empty()));
}

#[test]
fn tiny_tolerance_scale_fails() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.json", SMALL);
    let o = run(&[
        "verify",
        "--manifest",
        m.to_str().unwrap(),
        "--points",
        "2",
        "--tol-scale",
        "1e-12",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn malformed_and_unknown_keys_are_manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    for (i, body) in [
        "{ not json",
        r#"{"structures": [], "params": [], "sampling": {"seed": 1}}"#,
        &SMALL.replace("\"point_count\"", "\"pointcount\""),
        &SMALL.replace("\"family\": \"flat\"", "\"family\": \"nope\""),
        &SMALL.replace("\"c\": 0.0", "\"c\": 0.0, \"v\": \"0\""),
    ]
    .iter()
    .enumerate()
    {
        let m = write(dir.path(), &format!("m{i}.json"), body);
        let o = run(&["verify", "--manifest", m.to_str().unwrap()]);
        assert_eq!(
            o.status.code(),
            Some(2),
            "case {i}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn tube_violation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{
      "structures": [{"label": "s", "family": "riemannian_conformal", "dim": 2,
                      "parameters": {"c": 1.0}, "chart_box": [[-0.5, 0.5], [-0.5, 0.5]]}],
      "params": [{"label": "k", "alpha": 1.0, "beta": 1.0, "c": 1.0}],
      "sampling": {"seed": 1, "p_norm_range": [0.5, 2.0]}
    }"#;
    let m = write(dir.path(), "m.json", body);
    let o = run(&["verify", "--manifest", m.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cβ²"));
}

fn tensor(m: &Path, structure: &str, params: &str, objects: &str) -> Output {
    run(&[
        "tensor",
        "--manifest",
        m.to_str().unwrap(),
        "--structure",
        structure,
        "--params",
        params,
        "--x",
        "0.1,-0.2",
        "--p",
        "0.6,0.8",
        "--objects",
        objects,
    ])
}

#[test]
fn tensor_dumps_requested_objects() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.json", SMALL);
    let o = tensor(&m, "flat2", "flat", "G,theta,ricci");
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["connection_source"], "closed_form");
    let g = &r["objects"]["G"]["value"];
    for i in 0..2 {
        for j in 0..2 {
            let want = if i == j { 0.5 } else { 0.0 };
            assert!((g[i][j].as_f64().unwrap() - want).abs() < 1e-14);
        }
    }
    let theta = &r["objects"]["theta"]["value"];
    for a in 0..4 {
        for b in 0..4 {
            let want = match (a, b) {
                (2, 0) | (3, 1) => 1.0,
                (0, 2) | (1, 3) => -1.0,
                _ => 0.0,
            };
            assert!(
                (theta[a][b].as_f64().unwrap() - want).abs() < 1e-12,
                "theta[{a}][{b}]"
            );
        }
    }
    assert!(
        r["objects"]["ricci"]["value"]["lambda_hat"]
            .as_f64()
            .unwrap()
            .abs()
            < 1e-12
    );
}

#[test]
fn tensor_rejects_unknown_names() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.json", SMALL);
    assert_eq!(
        tensor(&m, "flat2", "flat", "G,bogus").status.code(),
        Some(2)
    );
    assert_eq!(tensor(&m, "nowhere", "flat", "G").status.code(), Some(2));
    assert_eq!(tensor(&m, "flat2", "nothing", "G").status.code(), Some(2));
}
