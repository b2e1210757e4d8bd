use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn peer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peer"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn verify_passes_for_known_triplets() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = peer(&["verify", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["AP4o33vgi", "AP4o33vsi"] {
        let text = std::fs::read_to_string(dir.path().join(format!("verify_{name}.json"))).unwrap();
        let report: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(report["passed"], serde_json::Value::Bool(true), "{name}");
        assert_eq!(report["triplet"], name);
    }
}

#[test]
fn dumped_coefficients_verify_and_corruption_is_named() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = peer(&["dump-coeffs", "--triplet", "AP4o33vsi", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dump = dir.path().join("AP4o33vsi.json");
    let o = peer(&["verify", "--coeffs", dump.to_str().unwrap(), "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));

    // perturb one entry of A in the dump
    let mut value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&dump).unwrap()).unwrap();
    let entry = &mut value["a"][2][1];
    *entry = serde_json::json!(entry.as_f64().unwrap() + 1e-6);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_string(&value).unwrap()).unwrap();
    let o = peer(&["verify", "--coeffs", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("order_conditions"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let cases = [
        r#"{"problem": "heat1d", "N": 15, "m_side": 32}"#,
        r#"{"problem": "heat1d", "N": 2}"#,
        r#"{"problem": "heat1d", "N": 15, "triplet": "AP9"}"#,
        r#"{"problem": "pca2d", "N": 15, "m": 32}"#,
        r#"{"problem": "heat1d", "N": 15, "unknown": 1}"#,
        r#"{"problem": "heat1d", "N": 15, "grid": {"file": "missing.csv"}}"#,
        r#"{"problem": "heat1d""#,
    ];
    for (k, text) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("c{k}.json"), text);
        let o = peer(&["solve", "--config", &cfg, "--out", out]);
        assert_eq!(o.status.code(), Some(2), "{text}: {}", stderr(&o));
    }
    let o = peer(&["verify", "--triplet", "nope", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let o = peer(&["solve", "--config", "/nonexistent/config.json", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn heat_solve_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "heat.json",
        r#"{"problem": "heat1d", "m": 40, "N": 15, "optimizer": {"tol": 1e-8}}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = peer(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let names = files(&a);
    assert_eq!(names, files(&b));
    for stem in ["trace_", "controls_", "trajectory_", "grid_", "steps_", "summary_"] {
        assert!(names.iter().any(|n| n.starts_with(stem)), "missing {stem} in {names:?}");
    }
    for n in &names {
        let x = std::fs::read(a.join(n)).unwrap();
        let y = std::fs::read(b.join(n)).unwrap();
        assert!(x == y, "{n} differs between runs");
    }

    let summary = names.iter().find(|n| n.starts_with("summary_")).unwrap();
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join(summary)).unwrap()).unwrap();
    assert_eq!(s["converged"], true);
    // approximate Wolfe steps may raise C by at most the optimizer resolution
    assert!(s["objective_max_rise"].as_f64().unwrap() <= 1e-13, "{s}");
    assert_eq!(s["steps"], 16);

    let trace = names.iter().find(|n| n.starts_with("trace_")).unwrap();
    let text = std::fs::read_to_string(a.join(trace)).unwrap();
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("# verb=solve triplet=AP4o33vgi config="), "{first}");
    let hash = first.rsplit('=').next().unwrap();
    assert_eq!(hash.len(), 16);
    assert!(trace.contains(hash));
}

#[test]
fn outputs_key_limits_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "heat.json",
        r#"{"problem": "heat1d", "m": 20, "N": 7, "outputs": ["summary"]}"#,
    );
    let out = dir.path().join("out");
    let o = peer(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let names = files(&out);
    assert_eq!(names.len(), 1, "{names:?}");
    assert!(names[0].starts_with("summary_"));
}

#[test]
fn adapt_demo_writes_density_and_grids() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "heat.json", r#"{"problem": "heat1d", "m": 40, "N": 15}"#);
    let out = dir.path().join("out");
    let o = peer(&["adapt-demo", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let names = files(&out);
    for stem in ["grid_base_", "grid_adapted_", "steps_adapted_", "density_", "measures_", "summary_"] {
        assert!(names.iter().any(|n| n.starts_with(stem)), "missing {stem} in {names:?}");
    }
    let adapted = names.iter().find(|n| n.starts_with("grid_adapted_")).unwrap();
    let text = std::fs::read_to_string(out.join(adapted)).unwrap();
    let points: Vec<f64> = text.lines().skip(2).map(|l| l.parse().unwrap()).collect();
    assert_eq!(points.len(), 17);
    assert_eq!(points[0], 0.0);
    assert_eq!(*points.last().unwrap(), 1.0);
    assert!(points.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn grid_file_is_used() {
    let dir = TempDir::new().unwrap();
    let pts: Vec<String> = (0..=8).map(|k| format!("{}", (k as f64 / 8.0).powf(1.2))).collect();
    std::fs::write(dir.path().join("g.csv"), format!("t [1]\n{}\n", pts.join("\n"))).unwrap();
    let cfg = write_config(
        dir.path(),
        "heat.json",
        &format!(
            r#"{{"problem": "heat1d", "m": 20, "N": 7, "grid": {{"file": "{}"}}}}"#,
            dir.path().join("g.csv").display()
        ),
    );
    let out = dir.path().join("out");
    let o = peer(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    // a file with the wrong number of steps is a config error
    let cfg = write_config(
        dir.path(),
        "bad.json",
        &format!(
            r#"{{"problem": "heat1d", "m": 20, "N": 9, "grid": {{"file": "{}"}}}}"#,
            dir.path().join("g.csv").display()
        ),
    );
    let o = peer(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn convergence_table_has_orders() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "conv.json", r#"{"problem": "heat1d", "m": 40, "N": [7, 15, 31]}"#);
    let out = dir.path().join("out");
    let o = peer(&["convergence", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let names = files(&out);
    let table = names.iter().find(|n| n.starts_with("convergence_") && n.ends_with(".csv")).unwrap();
    let text = std::fs::read_to_string(out.join(table)).unwrap();
    assert_eq!(text.lines().count(), 2 + 3, "{text}");

    let cfg = write_config(dir.path(), "pca.json", r#"{"problem": "pca2d", "N": [20]}"#);
    let o = peer(&["convergence", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
