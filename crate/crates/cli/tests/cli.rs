use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_multistep"))
}

fn scratch() -> PathBuf {
    static NEXT: AtomicUsize = AtomicUsize::new(0);
    let dir = std::env::temp_dir().join(format!(
        "multistep-cli-{}-{}",
        std::process::id(),
        NEXT.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.trim().parse().unwrap()).collect())
        .collect()
}

fn franke_classic(x: f64, y: f64) -> f64 {
    let (a, b) = (9.0 * x, 9.0 * y);
    0.75 * (-((a - 2.0).powi(2) + (b - 2.0).powi(2)) / 4.0).exp()
        + 0.75 * (-((a + 1.0).powi(2) / 49.0 + (b + 1.0) / 10.0)).exp()
        + 0.5 * (-((a - 7.0).powi(2) + (b - 3.0).powi(2)) / 4.0).exp()
        - 0.2 * (-((a - 4.0).powi(2) + (b - 7.0).powi(2))).exp()
}

/// Writes a two-stage base-3 design with Franke values and fits it with fixed widths.
fn fitted_model(dir: &Path) -> (PathBuf, PathBuf) {
    let design = dir.join("design.csv");
    run(&["gen-design", "--base", "3", "--m", "3", "--s", "2", "--seed", "1", "--stages", "9,27", "--out", s(&design)]);
    let mut text = String::from("y\n");
    for r in data_rows(&design) {
        text += &format!("{:e}\n", franke_classic(r[0], r[1]));
    }
    let values = dir.join("values.csv");
    std::fs::write(&values, text).unwrap();
    let model = dir.join("model.json");
    run(&[
        "fit", "--design", s(&design), "--values", s(&values), "--kernel", "gaussian", "--select", "fixed",
        "--theta", "3,6", "--out", s(&model),
    ]);
    (design, model)
}

#[test]
fn gen_design_writes_net_and_sidecar() {
    let dir = scratch();
    let out = dir.join("net.csv");
    run(&["gen-design", "--base", "5", "--m", "4", "--s", "2", "--stages", "250,375,500,625", "--out", s(&out)]);
    let rows = data_rows(&out);
    assert_eq!(rows.len(), 625);
    assert!(rows.iter().flatten().all(|v| (0.0..1.0).contains(v)));
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("net.csv.stages.json")).unwrap()).unwrap();
    assert_eq!(side["stage_sizes"], serde_json::json!([250, 375, 500, 625]));

    let single = dir.join("single.csv");
    run(&["gen-design", "--base", "5", "--m", "4", "--s", "2", "--stages", "625", "--out", s(&single)]);
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("single.csv.stages.json")).unwrap()).unwrap();
    assert_eq!(side["stage_sizes"], serde_json::json!([625]));

    let bad = bin().args(["gen-design", "--base", "4", "--m", "2", "--s", "2", "--out", s(&dir.join("x.csv"))]).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("error"));
}

#[test]
fn fit_then_predict_reproduces_training_data() {
    let dir = scratch();
    let (design, model) = fitted_model(&dir);
    let pred = dir.join("pred.csv");
    run(&["predict", "--model", s(&model), "--points", s(&design), "--variance", "--out", s(&pred)]);
    let header = std::fs::read_to_string(&pred).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "x1,x2,mean,variance");
    for r in data_rows(&pred) {
        let want = franke_classic(r[0], r[1]);
        assert!((r[2] - want).abs() <= 1e-8 * want.abs().max(1.0), "{} vs {want}", r[2]);
        assert!(r[3] >= 0.0 && r[3] < 1e-8);
    }
}

#[test]
fn malformed_values_exit_with_input_error() {
    let dir = scratch();
    let design = dir.join("design.csv");
    run(&["gen-design", "--base", "3", "--m", "2", "--s", "2", "--out", s(&design)]);
    let values = dir.join("values.csv");
    let mut text = String::from("y\n");
    for i in 0..9 {
        text += if i == 4 { "abc\n" } else { "1.0\n" };
    }
    std::fs::write(&values, text).unwrap();
    let out = bin()
        .args(["fit", "--design", s(&design), "--values", s(&values), "--out", s(&dir.join("m.json"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 6"));
}

#[test]
fn bounds_report_terms_and_delta_scaling() {
    let dir = scratch();
    let (_, model) = fitted_model(&dir);
    let report = |delta: &str, name: &str| -> serde_json::Value {
        let path = dir.join(name);
        run(&["bounds", "--model", s(&model), "--delta", delta, "--report", s(&path)]);
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
    };
    let a = report("1e-15", "a.json");
    let b = report("2e-15", "b.json");
    let va = a["numeric_bound"]["value"].as_f64().unwrap();
    let vb = b["numeric_bound"]["value"].as_f64().unwrap();
    assert_eq!(a["numeric_bound"]["terms"].as_array().unwrap().len(), 3);
    assert!((vb / va - 2.0).abs() < 1e-12);
    for key in ["dimension", "m_d", "c_d", "inputs", "stages", "numeric_bound", "admissibility"] {
        assert!(a.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn bounds_on_four_stage_model_has_fifteen_terms() {
    let dir = scratch();
    let design = dir.join("design.csv");
    run(&["gen-design", "--base", "3", "--m", "4", "--s", "2", "--stages", "9,27,54,81", "--out", s(&design)]);
    let mut text = String::from("y\n");
    for r in data_rows(&design) {
        text += &format!("{:e}\n", franke_classic(r[0], r[1]));
    }
    let values = dir.join("values.csv");
    std::fs::write(&values, text).unwrap();
    let model = dir.join("model.json");
    run(&[
        "fit", "--design", s(&design), "--values", s(&values), "--kernel", "wendland-smooth", "--select", "fixed",
        "--theta", "1,2,3,4", "--out", s(&model),
    ]);
    let report = dir.join("r.json");
    let out = run(&["bounds", "--model", s(&model), "--report", s(&report)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("(15 terms)"));
}

#[test]
fn bench_is_reproducible_without_timings() {
    let dir = scratch();
    let path = dir.join("report.json");
    let go = || -> String {
        run(&[
            "bench", "--function", "franke-classic", "--base", "3", "--m", "3", "--stages", "9,27",
            "--test-size", "200", "--no-bounds", "--omit-timings", "--jobs", "1", "--report", s(&path),
        ]);
        std::fs::read_to_string(&path).unwrap()
    };
    let a = go();
    assert_eq!(a, go());
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
    assert!(v["runs"][1]["mspe"].as_f64().unwrap() > 0.0);
}

#[test]
fn eval_prints_function_value() {
    let out = run(&["eval", "--function", "franke", "--point", "0,0"]);
    let v: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!((v - 0.913_635_464_535_441).abs() < 1e-12);
    let bad = bin().args(["eval", "--function", "franke", "--point", "0"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
