use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use torus::resonance::{measure_estimate, Domain, ResonanceConfig};

fn torus_cmd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_torus"))
}

fn run(args: &[&str]) -> Output {
    torus_cmd().args(args).output().expect("spawn torus")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn shipped_state() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/henon_a10/solution.json")
}

fn golden(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

/// Data rows of a CSV written by the tool, header block and column line skipped.
fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let cols = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    (cols, rows)
}

fn solve_henon(dir: &Path) -> Output {
    run(&["solve", "--model", "henon", "--amplitudes", "1,0", "--out", dir.to_str().unwrap()])
}

#[test]
fn models_lists_builtins() {
    let out = run(&["models"]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), golden("models.txt"));
}

#[test]
fn solve_writes_artifacts_with_headers() {
    let dir = TempDir::new().unwrap();
    let out = solve_henon(dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let sol: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol["header"]["version"], torus::VERSION);
    assert_eq!(sol["header"]["config"]["solver"]["b_variant"], "chain_rule");
    assert_eq!(sol["header"]["config"]["model"]["source"], "henon");
    assert_eq!(sol["status"], "converged");
    assert!(sol["final_norm_f"].as_f64().unwrap() < 1e-12);

    for name in ["convergence.csv", "conditions.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), format!("# torus {}", torus::VERSION));
        let config = lines.next().unwrap().strip_prefix("# config: ").unwrap();
        let config: Value = serde_json::from_str(config).unwrap();
        assert_eq!(config, sol["header"]["config"], "{name}");
    }
    let (cols, rows) = csv_rows(&dir.path().join("convergence.csv"));
    assert_eq!(cols[2], "norm_f");
    assert_eq!(rows.len(), sol["iterations"].as_u64().unwrap() as usize);
}

#[test]
fn solve_two_frequency_fpu() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "solve", "--model", "fpu", "--n", "3", "--epsilon", "0.1", "--amplitudes", "1,1,0", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sol: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol["omega_star"].as_array().unwrap().len(), 2);
    assert!(sol["schedule"].as_array().unwrap().iter().all(|n| n.as_u64().unwrap() <= 16));
}

#[test]
fn model_file_matches_builtin() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("model.json");
    torus::io::write_json(&file, &torus::io::ModelFile::from(&torus::henon_heiles())).unwrap();
    let from_file = dir.path().join("file");
    let out = run(&["solve", "--model-file", file.to_str().unwrap(), "--out", from_file.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let builtin = dir.path().join("builtin");
    assert_eq!(code(&solve_henon(&builtin)), 0);
    let omega = |d: &Path| -> Value {
        let sol: Value = serde_json::from_str(&fs::read_to_string(d.join("solution.json")).unwrap()).unwrap();
        sol["omega_star"].clone()
    };
    assert_eq!(omega(&from_file), omega(&builtin));

    // Dropping one term of a conjugate pair makes the perturbation non-real.
    let mut model: Value = serde_json::from_str(&fs::read_to_string(&file).unwrap()).unwrap();
    model["monomials"].as_array_mut().unwrap().pop();
    fs::write(&file, model.to_string()).unwrap();
    let out = run(&["solve", "--model-file", file.to_str().unwrap(), "--out", from_file.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not real"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&run(&["solve", "--amplitudes", "0,0", "--out", d])), 3);
    assert_eq!(code(&run(&["solve", "--amplitudes", "1,0,0", "--out", d])), 3);
    assert_eq!(code(&run(&["solve", "--model", "henon", "--n", "4", "--out", d])), 3);
    assert_eq!(code(&run(&["solve", "--tol", "-1", "--out", d])), 3);
    assert_eq!(code(&run(&["solve", "--no-such-flag"])), 3);
    assert_eq!(code(&run(&["trajectory", "--solution", "/nonexistent/solution.json"])), 3);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);

    let out = torus_cmd().env("TORUS_THREADS", "zero").args(["models"]).output().unwrap();
    assert_eq!(code(&out), 3);

    // One Newton step cannot reach the tolerance; the artifacts are still written.
    let out = run(&["solve", "--amplitudes", "1,0", "--rmax", "1", "--out", d]);
    assert_eq!(code(&out), 2);
    let sol: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol["status"], "max_iterations");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let read_all = |dir: &Path| -> Vec<Vec<u8>> {
        ["solution.json", "convergence.csv", "conditions.csv", "t.csv"]
            .iter()
            .map(|f| fs::read(dir.join(f)).unwrap())
            .collect()
    };
    let pass = || {
        assert_eq!(code(&solve_henon(dir.path())), 0);
        let sol = dir.path().join("solution.json");
        let t = dir.path().join("t.csv");
        let out = run(&["trajectory", "--solution", sol.to_str().unwrap(), "-o", t.to_str().unwrap()]);
        assert_eq!(code(&out), 0);
        read_all(dir.path())
    };
    let first = pass();
    let second = pass();
    assert!(first == second, "outputs differ between reruns");
}

#[test]
fn resonance_scan_independent_of_threads() {
    let dir = TempDir::new().unwrap();
    let scan = |threads: &str, name: &str| {
        let path = dir.path().join(name);
        let out = torus_cmd()
            .env("TORUS_THREADS", threads)
            .args(["resonance", "--domain", "0.5:1.5,1.2:1.8", "--omega-n", "2.1"])
            .args(["--samples", "3000", "--seed", "5", "-o", path.to_str().unwrap()])
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        (fs::read(path).unwrap(), out.stdout)
    };
    assert!(scan("1", "a.csv") == scan("3", "b.csv"));
}

#[test]
fn trajectory_grids_and_markers() {
    let dir = TempDir::new().unwrap();
    let state = shipped_state();
    let t = dir.path().join("t.csv");
    let m = dir.path().join("m.csv");
    let out = run(&[
        "trajectory", "--solution", state.to_str().unwrap(), "-o", t.to_str().unwrap(), "--markers",
        m.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let (cols, rows) = csv_rows(&t);
    assert_eq!(cols, ["t", "x_1", "y_1", "x_2", "y_2", "residual"]);
    assert_eq!(rows.len(), 2001);
    assert_eq!(rows[0][0], 0.0);
    assert_eq!(rows[1000][0], 10.0);
    assert_eq!(rows[2000][0], 20.0);
    assert!(rows.iter().all(|r| r[5] < 1e-8));

    let (_, markers) = csv_rows(&m);
    let times: Vec<f64> = markers.iter().map(|r| r[0]).collect();
    assert_eq!(times, [0.0, 10.0, 20.0]);
    for (mk, row) in markers.iter().zip([&rows[0], &rows[1000], &rows[2000]]) {
        assert_eq!(mk, row);
    }

    let out = run(&[
        "trajectory", "--solution", state.to_str().unwrap(), "--times", "-1,0.25,3.5", "-o", t.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let (_, rows) = csv_rows(&t);
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), [-1.0, 0.25, 3.5]);
    let text = fs::read_to_string(&t).unwrap();
    assert!(text.lines().nth(1).unwrap().contains(r#""custom":{"times":[-1.0,0.25,3.5]}"#));
}

#[test]
fn verify_reports_residual() {
    let state = shipped_state();
    let out = run(&["verify", "--solution", state.to_str().unwrap(), "--rk4-end", "10"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    let max = v["residual"]["max"].as_f64().unwrap();
    assert!(max > 0.0 && max < 1e-8, "residual {max}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("max ODE residual"));
    assert!(v["rk4"]["max_deviation"].as_f64().unwrap() < 1e-6);
}

#[test]
fn glue_check_on_shipped_state() {
    let state = shipped_state();
    let out = run(&["glue-check", "--model-state", state.to_str().unwrap(), "--N", "40", "--K", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["header"]["config"]["glue"]["k"], 4);
    let report = &v["report"];
    assert_eq!(report["n"], 40);
    assert!(report["residual"].as_f64().unwrap() < 1e-8);
    assert!(report["relative_error"].as_f64().unwrap() < 1e-8);
    assert!(report["glue_seconds"].as_f64().unwrap() >= 0.0);
    assert!(report["dense_seconds"].as_f64().unwrap() >= 0.0);

    // A central box larger than Λ_N is a configuration error.
    let out = run(&["glue-check", "--model-state", state.to_str().unwrap(), "--N", "20", "--K", "4"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn resonance_matches_golden_and_library() {
    let args = [
        "resonance", "--model", "henon", "--domain", "0.5:1.5", "--tau", "2", "--gamma", "0.01", "--samples",
        "20000", "--seed", "8",
    ];
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let got = stdout_json(&out);
    let want: Value = serde_json::from_str(&golden("resonance_henon.json")).unwrap();
    assert_eq!(got["header"]["config"], want["header"]["config"]);
    assert_eq!(got["model"], want["model"]);
    assert_eq!(got["scan"]["points"], want["scan"]["points"]);
    assert_eq!(got["scan"]["failures"], want["scan"]["failures"]);
    for key in ["fraction", "ci95", "series_bound"] {
        let (a, b) = (got["scan"][key].as_f64().unwrap(), want["scan"][key].as_f64().unwrap());
        assert!((a - b).abs() <= 1e-12 * b.abs(), "{key}: {a} vs {b}");
    }

    let cfg = ResonanceConfig { tau: 2.0, gamma: 0.01, scale_m: 10 };
    let domain = Domain::new(vec![0.5], vec![1.5]);
    let direct = measure_estimate(&domain, |_| vec![std::f64::consts::SQRT_2], &cfg, 20000, 8).unwrap();
    assert_eq!(got["scan"]["failures"].as_u64().unwrap() as usize, direct.failures);
    assert!(direct.fraction <= got["scan"]["series_bound"].as_f64().unwrap());
}

#[test]
fn resonance_grid_csv_columns() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("grid.csv");
    let out = run(&[
        "resonance", "--domain", "1:2", "--omega-n", "1.5", "--grid", "5", "-o", path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines[0], "omega_1,admissible,worst_set,worst_margin");
    assert_eq!(lines.len(), 6);
    let omegas: Vec<f64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(omegas, [1.0, 1.25, 1.5, 1.75, 2.0]);
    // ω_T = ω_N = 1.5: k = 1 gives <k, ω_T> − ω_N = 0, an exact resonance.
    let at_resonance: Vec<&str> = lines[3].split(',').collect();
    assert_eq!(at_resonance[1], "false");

    assert_eq!(code(&run(&["resonance", "--domain", "2:1", "--omega-n", "1"])), 3);
    assert_eq!(code(&run(&["resonance"])), 3);
}
