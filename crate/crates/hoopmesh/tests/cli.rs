use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hoopmesh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hoopmesh")).args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> serde_json::Value {
    let out = hoopmesh(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{args:?}: {e}: {}", String::from_utf8_lossy(&out.stdout)))
}

/// Stage commands print one JSON report each.
fn stage(args: &[&str]) -> serde_json::Value {
    let v = ok_json(args);
    assert_eq!(v["passed"], true, "{v:#}");
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stages_run_one_by_one() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let dirs = ok_json(&["synth", "--seed", "5", "--count", "2", "--jobs", "2", "--out", s(t)]);
    assert_eq!(dirs.as_array().unwrap().len(), 2);
    let scene = t.join("scene-000005");
    assert!(scene.join("truth/posed.obj").is_file());

    let cam = t.join("camera.json");
    let report = stage(&["calibrate", "--scene", s(&scene), "--out", s(&cam)]);
    assert_eq!(report["stage"], "calibrate");
    let decoded = t.join("decoded.json");
    let maps = t.join("maps.bin");
    stage(&["codec", "--scene", s(&scene), "--maps", s(&maps), "--out", s(&decoded)]);
    assert!(fs::metadata(&maps).unwrap().len() > 1000);
    let placed = t.join("placed.json");
    stage(&["place", "--scene", s(&scene), "--camera", s(&cam), "--pose", s(&decoded), "--out", s(&placed)]);
    let posed = t.join("posed.obj");
    let transforms = t.join("transforms.json");
    stage(&[
        "skin", "--scene", s(&scene), "--camera", s(&cam), "--placed", s(&placed), "--out", s(&posed), "--transforms",
        s(&transforms),
    ]);
    let body = t.join("body.obj");
    let compose_report = t.join("compose.json");
    let c = ok_json(&["compose", "--parts", s(&posed), "--out", s(&body), "--report", s(&compose_report)]);
    assert_eq!(c["residual_collisions"], 0);
    assert!(compose_report.is_file());

    let gt = scene.join("truth/posed.obj");
    let m = ok_json(&["eval", "--pred", s(&body), "--gt", s(&gt), "--metrics", "cd,emd,mpvpe,mpvpe-pa"]);
    for key in ["chamfer_x1000", "emd_m", "mpvpe_mm", "mpvpe_pa_mm"] {
        assert!(m[key].as_f64().unwrap() < 20.0, "{key}: {m}");
    }
    let j = ok_json(&[
        "eval", "--pred", s(&body), "--gt", s(&gt), "--metrics", "mpjpe,mpjpe-pa", "--pred-joints", s(&placed),
        "--gt-joints", s(&scene.join("truth/pose3d.json")),
    ]);
    assert!(j["mpjpe_pa_mm"].as_f64().unwrap() < 1.0, "{j}");
}

#[test]
fn pipeline_over_seeds_and_scene_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let reports = ok_json(&["pipeline", "--seed", "0", "--count", "3", "--jobs", "3", "--out", s(&t.join("runs"))]);
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 3);
    for (i, r) in reports.iter().enumerate() {
        assert_eq!(r["seed"], i as u64);
        assert_eq!(r["passed"], true);
        assert_eq!(r["stages"].as_array().unwrap().len(), 6);
    }
    assert!(t.join("runs/scene-000002/body.obj").is_file());

    ok_json(&["synth", "--seed", "9", "--out", s(t)]);
    let single = ok_json(&["pipeline", "--scene", s(&t.join("scene-000009"))]);
    assert_eq!(single[0]["seed"], 9);
}

#[test]
fn validation_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    ok_json(&["synth", "--seed", "1", "--out", s(t)]);
    let scene = t.join("scene-000001");
    fs::remove_file(scene.join("mask.pgm")).unwrap();
    let out = hoopmesh(&["pipeline", "--scene", s(&scene)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage calibrate") && err.contains("mask.pgm"), "{err}");

    let cfg = t.join("bad.toml");
    fs::write(&cfg, "[compose]\npush = 0.01\nspeed = 3\n").unwrap();
    let out = hoopmesh(&["--config", s(&cfg), "synth", "--out", s(t)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("compose.speed"));

    let a = t.join("a.obj");
    let b = t.join("b.obj");
    fs::write(&a, "v 0 0 0\nv 1 0 0\n").unwrap();
    fs::write(&b, "v 0 0 0\n").unwrap();
    let out = hoopmesh(&["eval", "--pred", s(&a), "--gt", s(&b), "--metrics", "mpvpe"]);
    assert_eq!(out.status.code(), Some(2));
    let out = hoopmesh(&["synth", "--jobs", "0", "--out", s(t)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn toy_network_trains_and_infers() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = t.join("toy.toml");
    fs::write(&cfg, "[toy]\nexamples = 6\n[toy.train]\nmax_steps = 3\nbatch_size = 2\n").unwrap();
    let params = t.join("params.bin");
    let history = t.join("history.json");
    let summary = ok_json(&["--config", s(&cfg), "train-toy", "--out", s(&params), "--report", s(&history)]);
    assert_eq!(summary["steps"], 3);
    let h: serde_json::Value = serde_json::from_str(&fs::read_to_string(&history).unwrap()).unwrap();
    assert_eq!(h["history"].as_array().unwrap().len(), 3);
    let part = t.join("part.obj");
    let inf = ok_json(&["--config", s(&cfg), "infer-part", "--params", s(&params), "--example", "2", "--out", s(&part)]);
    assert_eq!(inf["vertices"], 192);
    assert!(inf["mean_abs_error_m"].as_f64().unwrap().is_finite());
    assert!(fs::read_to_string(&part).unwrap().contains("g arms"));

    fs::write(&params, b"HMNP garbage").unwrap();
    let out = hoopmesh(&["infer-part", "--params", s(&params), "--out", s(&part)]);
    assert_eq!(out.status.code(), Some(2));
}
