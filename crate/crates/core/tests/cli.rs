use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = "\
rho = 1.0
grid.x_min = 1e-5
grid.x_max = 1e2
grid.n_cells = 70
coagulation.alpha = 0.0
coagulation.beta = 0.0
fragmentation.gamma = 1.0
verify.exponential = [0.1, 1.0, 10.0]

[[schedule]]
epsilon = 0.1

[[schedule]]
epsilon = 0.01
";

fn coagfrag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coagfrag"))
        .arg("--quiet")
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn json(path: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_converges_and_verify_reproduces_analysis() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let csv = dir.path().join("f.csv").display().to_string();
    let report = dir.path().join("report.json").display().to_string();
    let out = coagfrag(&["solve", &cfg, "--csv", &csv, "--json", &report]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let solved = json(&report);
    assert_eq!(solved["schema"], "coagfrag.solve/1");
    assert_eq!(solved["converged"], true);
    assert_eq!(solved["stages"].as_array().unwrap().len(), 2);
    let header = fs::read_to_string(&csv).unwrap();
    assert!(header.starts_with("x,f,cumulative_mass\n"));
    assert_eq!(header.lines().count(), 71);

    let verified_path = dir.path().join("verify.json").display().to_string();
    let out = coagfrag(&["verify", &csv, &cfg, "--json", &verified_path]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let verified = json(&verified_path);
    assert_eq!(verified["schema"], "coagfrag.verify/1");
    assert_eq!(verified["analysis"], solved["analysis"]);
}

#[test]
fn unconverged_run_exits_two_and_still_writes_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        &format!("evolve.max_steps = 1\n{SMALL}"),
    );
    let csv = dir.path().join("f.csv").display().to_string();
    let report = dir.path().join("report.json").display().to_string();
    let out = coagfrag(&["solve", &cfg, "--csv", &csv, "--json", &report]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&report)["converged"], false);
    assert!(Path::new(&csv).exists());
}

#[test]
fn solve_without_outputs_prints_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let out = coagfrag(&["solve", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["converged"], true);
    assert!(v["timing"]["wall_clock_seconds"].is_number());
}

#[test]
fn invalid_configs_exit_one_with_key_in_message() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (
            "supercritical.toml",
            SMALL.replace("coagulation.beta = 0.0", "coagulation.beta = 1.0"),
            "coagulation.beta",
        ),
        (
            "gamma.toml",
            SMALL.replace("fragmentation.gamma = 1.0", "fragmentation.gamma = 0.0"),
            "fragmentation.gamma",
        ),
        ("unknown.toml", format!("colour = 3\n{SMALL}"), "colour"),
        ("rho.toml", SMALL.replace("rho = 1.0\n", ""), "rho"),
    ];
    for (name, text, key) in cases {
        let cfg = write(dir.path(), name, &text);
        let out = Command::new(env!("CARGO_BIN_EXE_coagfrag"))
            .args(["solve", &cfg])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(1), "{name}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(key), "{name}: {err}");
    }
    let missing = coagfrag(&["solve", "/nonexistent/run.toml"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/run.toml"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(coagfrag(&["oracle", "nonsense"]).status.code(), Some(1));
    assert_eq!(coagfrag(&[]).status.code(), Some(1));
    assert_eq!(coagfrag(&["--help"]).status.code(), Some(0));
}

#[test]
fn verify_rejects_solution_on_another_grid() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL);
    let csv = dir.path().join("f.csv").display().to_string();
    assert_eq!(
        coagfrag(&["solve", &cfg, "--csv", &csv, "--json", "/dev/null"])
            .status
            .code(),
        Some(0)
    );
    let other = write(
        dir.path(),
        "other.toml",
        &SMALL.replace("n_cells = 70", "n_cells = 60"),
    );
    let out = coagfrag(&["verify", &csv, &other]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bernstein_oracle_writes_curve() {
    let out = coagfrag(&["oracle", "bernstein", "--s-max", "1e3", "--points", "200"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("s,U,residual"));
    assert_eq!(lines.count(), 200);
    let summary: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(summary["max_residual"].as_f64().unwrap() <= 1e-6);
    assert!((summary["slope_at_zero"].as_f64().unwrap() - 1.0).abs() <= 1e-3);
}

#[test]
fn constant_kernel_oracle_reports_z() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("ref.csv").display().to_string();
    let out = coagfrag(&[
        "oracle",
        "constant-kernel",
        "--n-cells",
        "50",
        "--out",
        &path,
    ]);
    assert_eq!(out.status.code(), Some(0));
    let summary: Value = serde_json::from_slice(&out.stderr).unwrap();
    let z = summary["z"].as_f64().unwrap();
    assert!((z - (-1f64).exp()).abs() < 1e-14, "{z}");
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("x,phi_ref\n"));
    assert_eq!(text.lines().count(), 51);
}
