use std::path::Path;
use std::process::{Command, Output};

use lpcurv::io::SolutionFile;

fn lpcurv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpcurv"))
        .args(args)
        .env_remove("LPCURV_LOG")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn solve_to(path: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["solve", "--out", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    lpcurv(&args)
}

#[test]
fn solve_constant_density() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sphere.json");
    let out = solve_to(&path, &["--p", "1.5", "--f", "preset:one", "--grid", "16x32"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sol = SolutionFile::read(&path).unwrap();
    assert_eq!(sol.s.len(), 16 * 32);
    assert!(sol.s.iter().all(|x| (x - 4.0).abs() < 1e-8 * 4.0));
    assert!(sol.relative_residual <= 1e-8);
}

#[test]
fn solve_writes_to_stdout_without_out() {
    let out = lpcurv(&["solve", "--p", "1.2", "--grid", "8x16"]);
    assert_eq!(code(&out), 0);
    let sol = SolutionFile::from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    let want = 2f64.powf(1.0 / 0.8);
    assert!(sol.s.iter().all(|x| (x - want).abs() < 1e-8 * want));
}

#[test]
fn solve_from_problem_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("problem.json");
    std::fs::write(
        &problem,
        r#"{"n": 2, "k": 1, "p": 1.5, "f": "harmonics:[(2,0,0.2),(2,2,-0.1)]", "grid": {"n_theta": 8, "n_phi": 16}}"#,
    )
    .unwrap();
    let path = dir.path().join("sol.json");
    let out = solve_to(&path, &["--problem", problem.to_str().unwrap(), "--grid", "16x32"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sol = SolutionFile::read(&path).unwrap();
    assert_eq!((sol.grid.n_theta, sol.grid.n_phi), (16, 32));
    assert!(sol.relative_residual <= 1e-8);
    assert!(sol.report.lemma_violation.is_none());
}

#[test]
fn regime_gate_and_parse_errors_exit_with_two() {
    let out = lpcurv(&["solve", "--p", "2.0", "--grid", "8x16"]);
    assert_eq!(code(&out), 2);
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "parse");
    assert_eq!(err["exit_code"], 2);

    for bad in [
        vec!["solve", "--p", "1.5", "--f", "harmonics:[(1,0,0.1)]"],
        vec!["solve", "--p", "1.5", "--grid", "7"],
        vec!["solve"],
        vec!["frobnicate"],
        vec!["verify", "/nonexistent/solution.json"],
    ] {
        assert_eq!(code(&lpcurv(&bad)), 2, "{bad:?}");
    }
    assert_eq!(code(&lpcurv(&["--help"])), 0);
}

#[test]
fn forced_solve_beyond_the_regime() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("forced.json");
    let out = solve_to(&path, &["--p", "2.5", "--grid", "8x16", "--force"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sol = SolutionFile::read(&path).unwrap();
    let want = 2f64.powf(1.0 / (2.0 - 2.5));
    assert!(sol.s.iter().all(|x| (x - want).abs() < 1e-8 * want));
}

#[test]
fn verify_round_trip_and_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sol.json");
    assert_eq!(
        code(&solve_to(
            &path,
            &["--p", "1.5", "--f", "harmonics:[(2,0,0.1)]", "--grid", "16x32"]
        )),
        0
    );
    let out = lpcurv(&["verify", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));

    let json = lpcurv(&["verify", "--json", path.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["residual_ok"], true);

    let mut sol = SolutionFile::read(&path).unwrap();
    sol.s.iter_mut().for_each(|x| *x *= 1.1);
    let bent = dir.path().join("bent.json");
    sol.write(&bent).unwrap();
    assert_eq!(code(&lpcurv(&["verify", bent.to_str().unwrap()])), 4);

    let text = std::fs::read_to_string(&path).unwrap();
    let cut = dir.path().join("cut.json");
    std::fs::write(&cut, &text[..text.len() / 3]).unwrap();
    assert_eq!(code(&lpcurv(&["verify", cut.to_str().unwrap()])), 2);

    let future = dir.path().join("future.json");
    std::fs::write(&future, text.replacen("\"1.0\"", "\"2.0\"", 1)).unwrap();
    assert_eq!(code(&lpcurv(&["verify", future.to_str().unwrap()])), 2);
}

#[test]
fn export_obj_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sol.json");
    assert_eq!(code(&solve_to(&path, &["--p", "1.5", "--grid", "8x16"])), 0);

    let obj = dir.path().join("mesh.obj");
    let out = lpcurv(&[
        "export",
        path.to_str().unwrap(),
        "--format",
        "obj",
        "--out",
        obj.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&obj).unwrap();
    let verts: Vec<[f64; 3]> = text
        .lines()
        .filter_map(|l| l.strip_prefix("v "))
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|x| x.parse().unwrap()).collect();
            [v[0], v[1], v[2]]
        })
        .collect();
    assert_eq!(verts.len(), 8 * 16);
    assert!(verts
        .iter()
        .all(|v| ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 4.0).abs() < 1e-7));
    assert!(text.lines().any(|l| l.starts_with("f ")));

    let out = lpcurv(&["export", path.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(code(&out), 0);
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "theta,phi,s,lambda1,lambda2,residual");
    assert_eq!(lines.count(), 8 * 16);

    assert_eq!(code(&lpcurv(&["export", path.to_str().unwrap(), "--format", "stl"])), 2);
}

#[test]
fn spectrum_table_and_json() {
    let out = lpcurv(&["spectrum", "--grid", "16x32"]);
    assert_eq!(code(&out), 0);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("1.3333333333"));

    let out = lpcurv(&["spectrum", "--q", "1.25", "--grid", "16x32", "--ell-max", "3", "--json"]);
    assert_eq!(code(&out), 0);
    let rep: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["rows"].as_array().unwrap().len(), 4);
    assert_eq!(rep["above_one"], 1);
    assert!(rep["max_error"].as_f64().unwrap() < 1e-8);
}
