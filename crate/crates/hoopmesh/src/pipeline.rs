//! Stage-by-stage reconstruction of one scene with per-stage metrics and
//! threshold checks.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use hoopmesh_core::camera::{mean_reprojection_difference, refine_camera_lines, solve_pnp_planar, Camera, PnpOptions};
use hoopmesh_core::codec::{
    decode_heatmaps, decode_location_maps, encode_heatmaps, encode_location_maps, HeatmapStack, LocationMapStack, DEFAULT_SIGMA,
};
use hoopmesh_core::composer::{resolve_interpenetration, Composition};
use hoopmesh_core::eval::{chamfer, emd, mpjpe, mpvpe, procrustes_align};
use hoopmesh_core::geom::Vec3;
use hoopmesh_core::mesh::BodyMesh;
use hoopmesh_core::placement::{place_player, Placement};
use hoopmesh_core::skeleton::{forward_kinematics_world, joint, BoneTransforms, Frame, Pose3D, Skeleton, LSP14};
use hoopmesh_core::skinning::{fit_pose_to_keypoints, heat_diffusion_weights, lbs, FitTargets, SkinningWeights};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::scene::{GroundTruth, PipelineInputs};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Calibrate,
    Codec,
    Place,
    Skin,
    Compose,
    Eval,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Calibrate => "calibrate",
            Stage::Codec => "codec",
            Stage::Place => "place",
            Stage::Skin => "skin",
            Stage::Compose => "compose",
            Stage::Eval => "eval",
        })
    }
}

/// `value <= limit`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub seconds: f64,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl StageReport {
    fn new(stage: Stage) -> Self {
        Self {
            stage,
            seconds: 0.0,
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            passed: true,
        }
    }

    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    fn check(&mut self, name: &str, value: f64, limit: f64) {
        let passed = value <= limit;
        self.passed &= passed;
        self.checks.push(Check {
            name: name.to_string(),
            value,
            limit,
            passed,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: Option<u64>,
    pub stages: Vec<StageReport>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub camera: Camera,
    pub placement: Placement,
    pub transforms: BoneTransforms,
    /// Composed body in world coordinates.
    pub body: BodyMesh,
}

/// Runs `f` as one stage: times it, tags its error and returns its report.
pub fn run_stage<T>(stage: Stage, f: impl FnOnce(&mut StageReport) -> Result<T>) -> Result<(T, StageReport)> {
    let mut report = StageReport::new(stage);
    let start = Instant::now();
    let out = f(&mut report).map_err(|e| e.at_stage(stage))?;
    report.seconds = start.elapsed().as_secs_f64();
    Ok((out, report))
}

fn max_abs(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs().max()).fold(0.0, f64::max)
}

/// Planar PnP from the clicks, then line refinement against the mask.
pub fn calibrate(inputs: &PipelineInputs, truth: Option<&GroundTruth>, cfg: &Config, r: &mut StageReport) -> Result<Camera> {
    let th = &cfg.thresholds;
    let start = Instant::now();
    let pnp = solve_pnp_planar(&inputs.clicks, inputs.width, inputs.height, &PnpOptions::default())?;
    let refined = refine_camera_lines(&pnp.camera, &inputs.mask, &inputs.court, &cfg.refine)?;
    let seconds = start.elapsed().as_secs_f64();
    r.metric("clicks", inputs.clicks.len() as f64);
    r.metric("pnp_click_residual_px", pnp.mean_residual);
    r.metric("initial_cost", refined.initial_cost);
    r.metric("final_cost", refined.final_cost);
    r.metric("iterations", refined.iterations as f64);
    r.metric("focal_px", refined.camera.f);
    r.check("cost_increase", refined.final_cost - refined.initial_cost, 0.0);
    r.check("solve_seconds", seconds, th.calibrate_seconds);
    if let Some(t) = truth {
        let kp = &inputs.court.keypoints;
        if let Some(e) = mean_reprojection_difference(&t.camera, &pnp.camera, kp, inputs.width, inputs.height) {
            r.metric("pnp_reprojection_px", e);
        }
        let e = mean_reprojection_difference(&t.camera, &refined.camera, kp, inputs.width, inputs.height)
            .ok_or_else(|| Error::Core(hoopmesh_core::Error::Degenerate("no court keypoint in view".into())))?;
        r.check("reprojection_px", e, th.reprojection_px);
    }
    Ok(refined.camera)
}

/// Encodes the crop-space 2D pose and the root-relative 3D pose into maps
/// and decodes them again. Returns the maps and the decoded 3D pose.
pub fn codec(inputs: &PipelineInputs, cfg: &Config, r: &mut StageReport) -> Result<(HeatmapStack, LocationMapStack, Pose3D)> {
    let th = &cfg.thresholds;
    let crop_pose = inputs.crop.pose_to_crop(&inputs.pose2d);
    let enc = encode_heatmaps(&crop_pose, DEFAULT_SIGMA)?;
    let loc = encode_location_maps(&inputs.pose3d, &crop_pose, DEFAULT_SIGMA)?;
    let dec2 = decode_heatmaps(&enc.stack);
    let dec3 = decode_location_maps(&loc, &enc.stack)?;
    let e2 = crop_pose
        .pixels
        .iter()
        .zip(&dec2.pixels)
        .map(|(a, b)| (a - b).abs().max())
        .fold(0.0, f64::max);
    r.metric("clamped_joints", enc.clamped.len() as f64);
    r.check("max_2d_error_crop_px", e2, th.codec_2d_px);
    r.check("max_3d_error_m", max_abs(&dec3.positions, &inputs.pose3d.positions), th.codec_3d_m);
    Ok((enc.stack, loc, dec3))
}

/// Lifts the root-relative pose into the world with the given camera.
pub fn place(
    inputs: &PipelineInputs,
    camera: &Camera,
    pose3d: &Pose3D,
    truth: Option<&GroundTruth>,
    cfg: &Config,
    r: &mut StageReport,
) -> Result<Placement> {
    let placed = place_player(camera, &inputs.pose2d, pose3d, &inputs.jump)?;
    r.metric("lowest_joint", placed.lowest_joint as f64);
    r.metric("effective_height_m", placed.effective_height);
    r.metric("airborne", inputs.jump.airborne as u8 as f64);
    if let Some(t) = truth {
        let j = placed.lowest_joint;
        r.metric("lowest_joint_error_m", (placed.pose.positions[j] - t.pose3d.positions[j]).norm());
        let exact = place_player(&t.camera, &inputs.pose2d, pose3d, &inputs.jump)?;
        r.check(
            "lowest_joint_error_exact_camera_m",
            (exact.pose.positions[j] - t.pose3d.positions[j]).norm(),
            cfg.thresholds.placement_exact_m,
        );
    }
    Ok(placed)
}

/// Rest-pose bone transforms with the root turned to face like `pose3d`
/// (rigid alignment of the rest joints) and the pelvis moved to `pelvis`.
pub fn initial_transforms(skeleton: &Skeleton, pose3d: &Pose3D, pelvis: Vec3) -> Result<BoneTransforms> {
    let rest = skeleton.rest_positions();
    let rest_rel: Vec<Vec3> = rest.iter().map(|p| p - rest[joint::PELVIS]).collect();
    let align = procrustes_align(&rest_rel, &pose3d.to_root_relative().positions, false)?;
    let mut init = BoneTransforms::identity(skeleton.len());
    init.transforms[joint::PELVIS].rotation = align.transform.rotation;
    init.transforms[joint::PELVIS].translation = pelvis - skeleton.rest_offsets[joint::PELVIS];
    Ok(init)
}

/// Skinning weights from the inputs, or by heat diffusion when absent.
pub fn skinning_weights(inputs: &PipelineInputs, cfg: &Config) -> Result<SkinningWeights> {
    match &inputs.weights {
        Some(w) => Ok(w.clone()),
        None => {
            let rest = Pose3D::new(inputs.skeleton.rest_positions(), Frame::World);
            Ok(heat_diffusion_weights(&inputs.rest_body, &inputs.skeleton, &rest, &cfg.heat)?)
        }
    }
}

/// Fits bone transforms to the placed 3D pose and the 2D keypoints, then
/// poses the rest body with linear blend skinning.
pub fn skin(
    inputs: &PipelineInputs,
    camera: &Camera,
    placed: &Pose3D,
    truth: Option<&GroundTruth>,
    cfg: &Config,
    r: &mut StageReport,
) -> Result<(BoneTransforms, BodyMesh)> {
    let sk = &inputs.skeleton;
    let weights = skinning_weights(inputs, cfg)?;
    let worst_sum = weights
        .rows
        .iter()
        .map(|row| (row.iter().map(|e| e.1).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    r.check("weight_row_sum_error", worst_sum, cfg.thresholds.weight_sum);
    let init = initial_transforms(sk, placed, placed.positions[joint::PELVIS])?;
    let targets = FitTargets {
        pose3d: Some(placed),
        pose2d: Some(&inputs.pose2d),
        camera: Some(camera),
    };
    let fit = fit_pose_to_keypoints(sk, &targets, &init, &cfg.fit)?;
    r.metric("fit_initial_cost", fit.initial_cost);
    r.metric("fit_final_cost", fit.final_cost);
    r.metric("fit_iterations", fit.iterations as f64);
    if let Some(e) = fit.residual_2d {
        r.metric("fit_residual_2d_px", e);
    }
    if let Some(e) = fit.residual_3d {
        r.metric("fit_residual_3d_m", e);
    }
    let posed = lbs(&inputs.rest_body, &weights, &fit.transforms, sk)?;
    if let Some(t) = truth {
        let joints = forward_kinematics_world(sk, &fit.transforms)?;
        r.metric("mpjpe_mm", mpjpe(&joints, &t.pose3d, &LSP14, false)?);
        r.check("mpjpe_pa_mm", mpjpe(&joints, &t.pose3d, &LSP14, true)?, cfg.thresholds.fit_mpjpe_pa_mm);
    }
    Ok((fit.transforms, posed))
}

/// Pushes body parts back under their garments.
pub fn compose(posed: &BodyMesh, cfg: &Config, r: &mut StageReport) -> Result<Composition> {
    let out = resolve_interpenetration(posed, &cfg.compose)?;
    let initial = out.iterations.first().map_or(0, |i| i.collisions);
    r.metric("initial_collisions", initial as f64);
    r.metric("outer_iterations", out.iterations.len() as f64);
    r.metric("pinned_vertices", out.pinned.len() as f64);
    r.check("residual_collisions", out.residual_collisions as f64, 0.0);
    Ok(out)
}

/// Surface and joint errors against the ground truth.
pub fn evaluate(
    skeleton: &Skeleton,
    transforms: &BoneTransforms,
    body: &BodyMesh,
    truth: &GroundTruth,
    cfg: &Config,
    r: &mut StageReport,
) -> Result<()> {
    let pred = body.vertices();
    let gt = truth.posed_body.vertices();
    r.metric("chamfer_x1000", chamfer(&pred, &gt)?);
    r.metric("emd_m", emd(&pred, &gt, cfg.eval.emd_samples)?);
    r.metric("mpvpe_mm", mpvpe(&pred, &gt, false)?);
    r.metric("mpvpe_pa_mm", mpvpe(&pred, &gt, true)?);
    let joints = forward_kinematics_world(skeleton, transforms)?;
    r.metric("mpjpe_mm", mpjpe(&joints, &truth.pose3d, &LSP14, false)?);
    r.metric("mpjpe_pa_mm", mpjpe(&joints, &truth.pose3d, &LSP14, true)?);
    Ok(())
}

/// calibrate → codec → place → skin → compose → eval. Checks that need
/// ground truth are only run when `truth` is given.
pub fn run_pipeline(inputs: &PipelineInputs, truth: Option<&GroundTruth>, cfg: &Config) -> Result<PipelineOutput> {
    fn keep<T>(stages: &mut Vec<StageReport>, (out, report): (T, StageReport)) -> T {
        stages.push(report);
        out
    }
    let mut stages = Vec::new();
    let camera = keep(&mut stages, run_stage(Stage::Calibrate, |r| calibrate(inputs, truth, cfg, r))?);
    let (_, _, pose3d) = keep(&mut stages, run_stage(Stage::Codec, |r| codec(inputs, cfg, r))?);
    let placement = keep(&mut stages, run_stage(Stage::Place, |r| place(inputs, &camera, &pose3d, truth, cfg, r))?);
    let (transforms, posed) = keep(&mut stages, run_stage(Stage::Skin, |r| skin(inputs, &camera, &placement.pose, truth, cfg, r))?);
    let composed = keep(&mut stages, run_stage(Stage::Compose, |r| compose(&posed, cfg, r))?);
    if let Some(t) = truth {
        keep(&mut stages, run_stage(Stage::Eval, |r| evaluate(&inputs.skeleton, &transforms, &composed.mesh, t, cfg, r))?);
    }
    let passed = stages.iter().all(|s| s.passed);
    Ok(PipelineOutput {
        report: PipelineReport {
            seed: inputs.seed,
            stages,
            passed,
        },
        camera,
        placement,
        transforms,
        body: composed.mesh,
    })
}
