use std::fs;

use hoopmesh::config::Config;
use hoopmesh::core::synth::synth_scene;
use hoopmesh::pipeline::{run_pipeline, Stage};
use hoopmesh::scene::{read_scene, split_bundle, write_scene};
use hoopmesh::{Error, ExitCode};

fn stage_names(report: &hoopmesh::pipeline::PipelineReport) -> Vec<String> {
    report.stages.iter().map(|s| s.stage.to_string()).collect()
}

#[test]
fn scene_directory_round_trip_gives_the_same_reconstruction() {
    let cfg = Config::default();
    let bundle = synth_scene(4, &cfg.scene).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), &bundle).unwrap();
    let (inputs, truth) = read_scene(dir.path()).unwrap();
    let truth = truth.expect("truth directory was written");
    let (mem_inputs, mem_truth) = split_bundle(&bundle);
    assert_eq!(inputs.clicks, mem_inputs.clicks);
    assert_eq!(inputs.pose2d, mem_inputs.pose2d);
    assert_eq!(inputs.pose3d, mem_inputs.pose3d);
    assert_eq!(inputs.rest_body, mem_inputs.rest_body);
    assert_eq!(truth.camera, mem_truth.camera);
    assert_eq!(truth.posed_body, mem_truth.posed_body);

    let from_disk = run_pipeline(&inputs, Some(&truth), &cfg).unwrap();
    let in_memory = run_pipeline(&mem_inputs, Some(&mem_truth), &cfg).unwrap();
    assert!(from_disk.report.passed, "{:#?}", from_disk.report);
    assert_eq!(from_disk.body, in_memory.body);
    assert_eq!(from_disk.camera, in_memory.camera);
    assert_eq!(stage_names(&from_disk.report), ["calibrate", "codec", "place", "skin", "compose", "eval"]);
}

#[test]
fn without_truth_the_eval_stage_is_skipped() {
    let cfg = Config::default();
    let bundle = synth_scene(2, &cfg.scene).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), &bundle).unwrap();
    fs::remove_dir_all(dir.path().join("truth")).unwrap();
    let (inputs, truth) = read_scene(dir.path()).unwrap();
    assert!(truth.is_none());
    let out = run_pipeline(&inputs, None, &cfg).unwrap();
    assert_eq!(stage_names(&out.report), ["calibrate", "codec", "place", "skin", "compose"]);
    assert!(out.report.stages.iter().all(|s| s.checks.iter().all(|c| !c.name.contains("reprojection"))));
}

#[test]
fn missing_weights_are_computed_by_heat_diffusion() {
    let mut cfg = Config::default();
    cfg.heat.voxel_res = cfg.scene.voxel_res;
    let bundle = synth_scene(6, &cfg.scene).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), &bundle).unwrap();
    fs::remove_file(dir.path().join("weights.json")).unwrap();
    let (inputs, truth) = read_scene(dir.path()).unwrap();
    assert!(inputs.weights.is_none());
    let out = run_pipeline(&inputs, truth.as_ref(), &cfg).unwrap();
    // heat settings match the generator's, so the weights do too
    let with = run_pipeline(&split_bundle(&bundle).0, truth.as_ref(), &cfg).unwrap();
    assert_eq!(out.body, with.body);
}

#[test]
fn missing_mask_is_a_stage_tagged_io_error() {
    let cfg = Config::default();
    let bundle = synth_scene(1, &cfg.scene).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), &bundle).unwrap();
    fs::remove_file(dir.path().join("mask.pgm")).unwrap();
    let err = read_scene(dir.path()).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Calibrate));
    assert_eq!(err.exit_code(), ExitCode::Validation);
    match err {
        Error::Stage { source, .. } => assert!(matches!(*source, Error::Io { .. })),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_pose_is_tagged_with_the_codec_stage() {
    let cfg = Config::default();
    let bundle = synth_scene(1, &cfg.scene).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), &bundle).unwrap();
    fs::write(dir.path().join("pose2d.json"), "{\"pixels\": 3}").unwrap();
    let err = read_scene(dir.path()).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Codec));
    assert!(err.to_string().starts_with("stage codec: "));
}

#[test]
fn configuration_reaches_the_stage_checks() {
    let cfg = Config::from_toml_str("[thresholds]\nreprojection_px = 1e-9\n").unwrap();
    let bundle = synth_scene(3, &cfg.scene).unwrap();
    let (inputs, truth) = split_bundle(&bundle);
    let out = run_pipeline(&inputs, Some(&truth), &cfg).unwrap();
    let calib = &out.report.stages[0];
    assert!(!calib.passed);
    assert!(!out.report.passed);
    let check = calib.checks.iter().find(|c| c.name == "reprojection_px").unwrap();
    assert_eq!(check.limit, 1e-9);
}

#[test]
fn report_serializes_with_snake_case_stages() {
    let cfg = Config::default();
    let bundle = synth_scene(0, &cfg.scene).unwrap();
    let (inputs, truth) = split_bundle(&bundle);
    let out = run_pipeline(&inputs, Some(&truth), &cfg).unwrap();
    let json = serde_json::to_value(&out.report).unwrap();
    assert_eq!(json["seed"], 0);
    assert_eq!(json["stages"][3]["stage"], "skin");
    let back: hoopmesh::pipeline::PipelineReport = serde_json::from_value(json).unwrap();
    assert_eq!(back, out.report);
}
