use std::path::Path;
use std::process::{Command, Output};

use transient::io::{HistogramData, HistogramFile};
use transient_core::render::render_plane;
use transient_core::{PlaneParams, RenderSettings, SensorConfig};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transient")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn render_then_estimate_recovers_the_tilt() {
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("h.json");
    let o = run(&["render-plane", "--z0", "2", "--theta-n", "20", "--out", p(&hist)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["estimate-plane", "--in", p(&hist), "--method", "theoretical"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["kind"], "plane_estimate");
    let theta = v["theta_n_deg"].as_f64().unwrap();
    assert!((theta - 20.0).abs() < 2.0, "{theta}");
    // The peak of a tilted plane sits off the axis intercept.
    assert!((v["z0_m"].as_f64().unwrap() - 2.0).abs() < 0.2);
}

#[test]
fn cli_render_matches_the_library() {
    let o = run(&["render-plane", "--z0", "3", "--theta-n", "15", "--phi-n", "40"]);
    assert_eq!(code(&o), 0);
    let file = HistogramFile::from_json(std::str::from_utf8(&o.stdout).unwrap(), Path::new("stdout")).unwrap();
    let HistogramData::Transient(h) = file.data else { panic!() };
    let cfg = SensorConfig::default();
    let lib = render_plane(&PlaneParams::new(3.0, 15f64.to_radians(), 40f64.to_radians()).unwrap(), &cfg, &RenderSettings::default()).unwrap();
    assert_eq!(h, lib);
    assert_eq!(file.config, Some(cfg));
}

#[test]
fn spad_sim_records_generated_seed_and_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("h.json");
    let est = dir.path().join("e.json");
    assert_eq!(code(&run(&["render-plane", "--z0", "2", "--theta-n", "10", "--out", p(&hist)])), 0);
    let o = run(&["spad-sim", "--in", p(&hist), "--cycles", "1000", "--estimate", "lowflux", "--estimate-out", p(&est)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["kind"], "spad");
    assert_eq!(v["metadata"]["seed_generated"], true);
    assert!(v["metadata"]["seed"].is_u64());
    assert!(matches!(HistogramFile::read(&est).unwrap().data, HistogramData::Transient(_)));

    let a = run(&["spad-sim", "--in", p(&hist), "--cycles", "500", "--mode", "async", "--dead-time-bins", "3", "--seed", "9"]);
    let b = run(&["spad-sim", "--in", p(&hist), "--cycles", "500", "--mode", "async", "--dead-time-bins", "3", "--seed", "9"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert!(json(&a)["metadata"].get("seed_generated").is_none());
}

#[test]
fn validation_errors_exit_one_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("h.json");
    assert_eq!(code(&run(&["render-plane", "--z0", "2", "--theta-n", "10", "--out", p(&hist)])), 0);
    for args in [
        vec!["spad-sim", "--in", p(&hist), "--cycles", "0"],
        vec!["render-plane", "--z0", "2", "--theta-n", "10", "--bogus"],
        vec!["estimate-plane", "--in", "/nonexistent.json"],
        vec!["frobnicate"],
        vec!["sweep", "--z0-grid", "1:2"],
    ] {
        let o = run(&args);
        assert_eq!(code(&o), 1, "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
    }
}

#[test]
fn numerical_failures_exit_two() {
    // Part of the plane lies beyond the unambiguous range.
    let o = run(&["render-plane", "--z0", "9.9", "--theta-n", "40"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
}

#[test]
fn sweep_plot_data_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("plot.csv");
    let report = dir.path().join("r.json");
    let o = run(&[
        "sweep", "--z0-grid", "1:3:2", "--theta-grid", "10:30:3", "--cycles", "20000", "--seeds", "1",
        "--seed", "5", "--angular-resolution", "32", "--out", p(&report), "--emit-plot-data", p(&csv),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rows.headers().unwrap().len(), 7);
    assert_eq!(rows.records().count(), 6);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["kind"], "sweep_report");
    assert_eq!(v["seeds"], serde_json::json!([5]));
    assert_eq!(v["cells"].as_array().unwrap().len(), 6);
    for c in v["cells"].as_array().unwrap() {
        for m in ["mae_theoretical", "mae_abs"] {
            if let Some(e) = c[m].as_object() {
                assert!(e.values().all(|x| x.as_f64().unwrap() >= 0.0));
            }
        }
    }
}

#[test]
fn metrics_on_depth_maps() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.tkdm");
    let pred = dir.path().join("pred.tkdm");
    std::fs::write(&gt, "TKDM 1 3 1 0.5\n1 2 4\n1 1 1\n").unwrap();
    std::fs::write(&pred, "TKDM 1 3 1 0.5\n1.1 1.8 5\n1 1 1\n").unwrap();
    let o = run(&["metrics", "--pred", p(&pred), "--gt", p(&gt)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert!((v["abs_rel"].as_f64().unwrap() - 0.15).abs() < 1e-12);
    assert_eq!(v["valid_pixels"], 3);
    std::fs::write(&pred, "TKDM 1 2 1 0.5\n1 2\n1 1\n").unwrap();
    assert_eq!(code(&run(&["metrics", "--pred", p(&pred), "--gt", p(&gt)])), 1);
}

#[test]
fn render_depth_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("s.tkdm");
    let mut text = String::from("TKDM 1 4 4 0.6\n");
    for _ in 0..4 {
        text.push_str("2 2 2 2\n");
    }
    for _ in 0..4 {
        text.push_str("0.5 0.5 0.5 0.5\n");
    }
    std::fs::write(&scene, text).unwrap();
    let args = ["render-depth", "--scene", p(&scene), "--rays", "20000", "--seed", "3"];
    let a = run(&args);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, run(&args).stdout);
    let v = json(&a);
    assert_eq!(v["metadata"]["seed"], 3);
    assert_eq!(v["metadata"]["total_rays"], 20000);
}
