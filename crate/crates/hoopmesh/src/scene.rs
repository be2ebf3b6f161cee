//! Scene directories: the files one synthetic scene is written as, and the
//! inputs the pipeline reads back from them.
//!
//! ```text
//! scene.json     seed, image size, crop window, court model
//! clicks.json    noisy court keypoint clicks
//! mask.pgm       court line mask
//! pose2d.json    2D joints, full-frame pixels
//! pose3d.json    root-relative 3D joints
//! jump.json      jump class and height
//! skeleton.json  joint hierarchy
//! rest.obj       part-tagged rest body
//! weights.json   sparse skinning weights
//! truth/         camera.json, pose3d.json (world), transforms.json, posed.obj
//! ```

use std::path::Path;

use hoopmesh_core::camera::{Camera, LineMask};
use hoopmesh_core::codec::JumpInfo;
use hoopmesh_core::court::CourtModel;
use hoopmesh_core::geom::Vec3;
use hoopmesh_core::mesh::BodyMesh;
use hoopmesh_core::skeleton::{BoneTransforms, Crop, Pixel, Pose2D, Pose3D, Skeleton};
use hoopmesh_core::skinning::SkinningWeights;
use hoopmesh_core::synth::SceneBundle;
use serde::{Deserialize, Serialize};

use crate::formats::json::{clicks_from_file, clicks_to_file, read_camera, read_json, read_weights, write_camera, write_json, write_weights, Click};
use crate::formats::obj::{read_body_obj, write_body_obj};
use crate::formats::pgm::{read_mask, write_mask};
use crate::pipeline::Stage;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: Option<u64>,
    pub width: usize,
    pub height: usize,
    pub crop: Crop,
    pub court: CourtModel,
}

/// Everything the pipeline consumes: what an upstream detector and pose
/// network would hand over, plus the body template.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub seed: Option<u64>,
    pub width: usize,
    pub height: usize,
    pub court: CourtModel,
    pub clicks: Vec<(Pixel, Vec3)>,
    pub mask: LineMask,
    pub pose2d: Pose2D,
    /// Root-relative.
    pub pose3d: Pose3D,
    pub crop: Crop,
    pub jump: JumpInfo,
    pub skeleton: Skeleton,
    pub rest_body: BodyMesh,
    /// Computed by heat diffusion when absent.
    pub weights: Option<SkinningWeights>,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub camera: Camera,
    /// World frame.
    pub pose3d: Pose3D,
    pub transforms: BoneTransforms,
    pub posed_body: BodyMesh,
}

pub fn split_bundle(b: &SceneBundle) -> (PipelineInputs, GroundTruth) {
    (
        PipelineInputs {
            seed: Some(b.seed),
            width: b.width,
            height: b.height,
            court: b.court.clone(),
            clicks: b.clicks.clone(),
            mask: b.mask.clone(),
            pose2d: b.pose2d.clone(),
            pose3d: b.root_relative_pose(),
            crop: b.crop,
            jump: b.jump,
            skeleton: b.skeleton.clone(),
            rest_body: b.rest_body.clone(),
            weights: Some(b.weights.clone()),
        },
        GroundTruth {
            camera: b.camera,
            pose3d: b.pose3d.clone(),
            transforms: b.transforms.clone(),
            posed_body: b.posed_body.clone(),
        },
    )
}

pub fn write_scene(dir: &Path, b: &SceneBundle) -> Result<()> {
    let meta = SceneMeta {
        seed: Some(b.seed),
        width: b.width,
        height: b.height,
        crop: b.crop,
        court: b.court.clone(),
    };
    write_json(&dir.join("scene.json"), &meta)?;
    write_json(&dir.join("clicks.json"), &clicks_to_file(&b.clicks))?;
    write_mask(&dir.join("mask.pgm"), &b.mask)?;
    write_json(&dir.join("pose2d.json"), &b.pose2d)?;
    write_json(&dir.join("pose3d.json"), &b.root_relative_pose())?;
    write_json(&dir.join("jump.json"), &b.jump)?;
    write_json(&dir.join("skeleton.json"), &b.skeleton)?;
    write_body_obj(&dir.join("rest.obj"), &b.rest_body)?;
    write_weights(&dir.join("weights.json"), &b.weights)?;
    let truth = dir.join("truth");
    write_camera(&truth.join("camera.json"), &b.camera)?;
    write_json(&truth.join("pose3d.json"), &b.pose3d)?;
    write_json(&truth.join("transforms.json"), &b.transforms)?;
    write_body_obj(&truth.join("posed.obj"), &b.posed_body)?;
    Ok(())
}

/// Reads a scene directory. Failures are tagged with the first stage that
/// needs the missing or malformed file.
pub fn read_scene(dir: &Path) -> Result<(PipelineInputs, Option<GroundTruth>)> {
    let tag = |stage: Stage| move |e: crate::Error| e.at_stage(stage);
    let meta: SceneMeta = read_json(&dir.join("scene.json")).map_err(tag(Stage::Calibrate))?;
    let clicks: Vec<Click> = read_json(&dir.join("clicks.json")).map_err(tag(Stage::Calibrate))?;
    let mask = read_mask(&dir.join("mask.pgm")).map_err(tag(Stage::Calibrate))?;
    let pose2d: Pose2D = read_json(&dir.join("pose2d.json")).map_err(tag(Stage::Codec))?;
    let pose3d: Pose3D = read_json(&dir.join("pose3d.json")).map_err(tag(Stage::Codec))?;
    let jump: JumpInfo = read_json(&dir.join("jump.json")).map_err(tag(Stage::Place))?;
    let skeleton: Skeleton = read_json(&dir.join("skeleton.json")).map_err(tag(Stage::Skin))?;
    let rest_body = read_body_obj(&dir.join("rest.obj")).map_err(tag(Stage::Skin))?;
    let wpath = dir.join("weights.json");
    let weights = if wpath.exists() { Some(read_weights(&wpath).map_err(tag(Stage::Skin))?) } else { None };
    let inputs = PipelineInputs {
        seed: meta.seed,
        width: meta.width,
        height: meta.height,
        court: meta.court,
        clicks: clicks_from_file(&clicks),
        mask,
        pose2d,
        pose3d,
        crop: meta.crop,
        jump,
        skeleton,
        rest_body,
        weights,
    };
    let truth_dir = dir.join("truth");
    let truth = if truth_dir.is_dir() {
        let t = tag(Stage::Eval);
        Some(GroundTruth {
            camera: read_camera(&truth_dir.join("camera.json")).map_err(t)?,
            pose3d: read_json(&truth_dir.join("pose3d.json")).map_err(t)?,
            transforms: read_json(&truth_dir.join("transforms.json")).map_err(t)?,
            posed_body: read_body_obj(&truth_dir.join("posed.obj")).map_err(t)?,
        })
    } else {
        None
    };
    Ok((inputs, truth))
}
