use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn g_heat(terminal: Value) -> Value {
    json!({
        "control": {
            "f_interval": {"lo": 1, "hi": 4},
            "b_expr": "0",
            "a_expr": "f",
            "conditions": ["zero_drift", "ellipticity", "convexity", "linear_growth", "lipschitz"]
        },
        "grid": {"x_min": -10, "x_max": 10, "nx": 201, "horizon": 1},
        "terminal": terminal,
        "mc": {"x0": 0, "n_steps": 64, "n_paths": 20000, "seed": 7}
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn nldiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nldiff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_writes_grid_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "gheat.json",
        &g_heat(json!({"builtin": "square"})),
    );
    let csv = dir.path().join("v.csv");
    let out = nldiff(&["solve", "--config", path_str(&cfg), "--out", path_str(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    let steps = summary["steps"].as_u64().unwrap() as usize;
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), steps + 2, "x row plus one row per time level");
    assert!(rows.iter().all(|r| r.len() == 201));
    assert_eq!(rows[0][0], -10.0);
    assert_eq!(rows[0][200], 10.0);
    // Second row is the terminal data, last row the time-zero values.
    assert_eq!(rows[1][100], 0.0);
    assert!((rows[steps + 1][100] - 4.0).abs() < 2e-2);
}

#[test]
fn solve_with_outputs_and_linear_companion() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = g_heat(json!({"builtin": "abs"}));
    cfg["output"] = json!({
        "value_csv": dir.path().join("v.csv"),
        "value_json": dir.path().join("v.json"),
        "policy_csv": dir.path().join("p.csv"),
        "linear_csv": dir.path().join("lin.csv"),
    });
    let cfg = write_config(dir.path(), "abs.json", &cfg);
    let out = nldiff(&["solve", "--config", path_str(&cfg), "--linear", "a-star"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let field: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("v.json")).unwrap()).unwrap();
    assert_eq!(field["xs"].as_array().unwrap().len(), 201);
    assert_eq!(field["meta"]["scheme"], "explicit-upwind-bellman");
    // Convex terminal under zero drift: the linear a*-solve is the same field
    // up to rounding in the sign of near-zero second differences.
    let read = |name: &str| -> Vec<f64> {
        fs::read_to_string(dir.path().join(name))
            .unwrap()
            .split([',', '\n'])
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().unwrap())
            .collect()
    };
    let (nonlinear, linear) = (read("v.csv"), read("lin.csv"));
    assert_eq!(nonlinear.len(), linear.len());
    let gap = nonlinear
        .iter()
        .zip(&linear)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(gap <= 1e-12, "{gap}");
    let policy = fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert!(policy.lines().count() > 2);
}

#[test]
fn resolution_flag_overrides_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "gheat.json",
        &g_heat(json!({"builtin": "square"})),
    );
    let csv = dir.path().join("v.csv");
    let out = nldiff(&[
        "solve",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&csv),
        "--resolution",
        "101",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["nx"], 101);
    let first = fs::read_to_string(&csv).unwrap();
    assert_eq!(first.lines().next().unwrap().split(',').count(), 101);
}

#[test]
fn verify_passes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gheat.json", &g_heat(json!({"builtin": "abs"})));
    let run = |name: &str| {
        let report = dir.path().join(name);
        let out = nldiff(&[
            "verify",
            "--config",
            path_str(&cfg),
            "--out",
            path_str(&report),
            "--threads",
            "2",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let mut v: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
        assert!(v["timestamp"]["runtimes_ms"].is_object());
        v.as_object_mut().unwrap().remove("timestamp");
        v
    };
    let first = run("r1.json");
    let second = run("r2.json");
    assert_eq!(
        serde_json::to_string(&first).unwrap(),
        serde_json::to_string(&second).unwrap()
    );
    let records = first["records"].as_array().unwrap();
    assert_eq!(records.len(), 6);
    for r in records {
        let gated = r["check_id"] == "linearization_increasing";
        assert_eq!(
            r["pass"],
            if gated {
                Value::Null
            } else {
                Value::Bool(true)
            },
            "{r}"
        );
    }
}

#[test]
fn verify_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = g_heat(json!({"builtin": "square"}));
    cfg["verify"] =
        json!({"checks": [{"check": "semigroup", "s": 0.5, "t": 0.5}], "tol_pde": -1.0});
    let cfg = write_config(dir.path(), "strict.json", &cfg);
    let out = nldiff(&["verify", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["records"][0]["pass"], false);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "gheat.json",
        &g_heat(json!({"builtin": "square"})),
    );
    let sim = |seed: Option<&str>| {
        let mut args = vec!["simulate", "--config", path_str(&cfg)];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        let out = nldiff(&args);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        serde_json::from_slice::<Value>(&out.stdout).unwrap()
    };
    let base = sim(None);
    assert_eq!(base["seed"], 7);
    assert_eq!(sim(Some("7")), base);
    let other = sim(Some("8"));
    assert_eq!(other["seed"], 8);
    assert_ne!(other["mean"], base["mean"]);
    let mean = base["mean"].as_f64().unwrap();
    let se = base["stderr"].as_f64().unwrap();
    assert!((mean - 4.0).abs() < 3.0 * se + 2.5e-2, "{base}");
}

#[test]
fn check_spec_reports_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "gheat.json",
        &g_heat(json!({"builtin": "square"})),
    );
    let out = nldiff(&["check-spec", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["all_declared_hold"], true);
    assert_eq!(report["conditions"].as_array().unwrap().len(), 9);

    let mut quad = g_heat(json!({"builtin": "square"}));
    quad["control"]["b_expr"] = json!("x^2");
    quad["control"]["conditions"] = json!(["linear_growth"]);
    let cfg = write_config(dir.path(), "quad.json", &quad);
    let out = nldiff(&["check-spec", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let growth = report["conditions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["condition"] == "linear_growth")
        .unwrap();
    assert_eq!(growth["pass"], false);
    assert!(growth["witness"].is_object());
}

#[test]
fn syntax_error_exits_two_with_offset() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = g_heat(json!({"builtin": "square"}));
    cfg["control"]["a_expr"] = json!("2*(");
    let cfg = write_config(dir.path(), "bad.json", &cfg);
    let out = nldiff(&["solve", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind=SyntaxError offset=3 "), "{err}");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut unknown = g_heat(json!({"builtin": "square"}));
    unknown["grid"]["nt"] = json!(100);
    let cfg = write_config(dir.path(), "unknown.json", &unknown);
    let out = nldiff(&["solve", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).starts_with("error kind=ConfigError"),
        "{}",
        stderr(&out)
    );

    let out = nldiff(&[
        "solve",
        "--config",
        path_str(&dir.path().join("missing.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error kind=IoError"));

    let mut f_terminal = g_heat(json!({"expr": "x*f"}));
    f_terminal["mc"] = Value::Null;
    let cfg = write_config(dir.path(), "fterm.json", &f_terminal);
    let out = nldiff(&["solve", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut unstable = g_heat(json!({"builtin": "square"}));
    unstable["grid"]["dt"] = json!(0.01);
    let cfg = write_config(dir.path(), "unstable.json", &unstable);
    let out = nldiff(&["solve", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(
        stderr(&out).starts_with("error kind=UnstableStep"),
        "{}",
        stderr(&out)
    );

    let mut blowup = g_heat(json!({"expr": "exp(x)"}));
    blowup["grid"] = json!({"x_min": -10, "x_max": 800, "nx": 81, "horizon": 1});
    let cfg = write_config(dir.path(), "blowup.json", &blowup);
    let out = nldiff(&["solve", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(
        err.starts_with("error kind=EvalError") || err.starts_with("error kind=NonFinite"),
        "{err}"
    );
}
