//! Deterministic synthetic data: capsule bodies, broadcast cameras and full
//! scenes with ground truth for every stage.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rand_distr::{Distribution, Normal};

use crate::camera::{project, rasterize_court_lines, Camera, LineMask};
use crate::codec::{JumpInfo, CROP_SIZE, JUMP_THRESHOLD};
use crate::court::{make_court_model, CourtConfig, CourtModel};
use crate::geom::{exp_so3, Rigid, Vec3};
use crate::mesh::{capsule, tube, uv_sphere, BodyMesh, Part, PartMesh};
use crate::meshnet::{TlConfig, TlExample};
use crate::placement::solve_depth_for_height;
use crate::skeleton::{
    forward_kinematics, forward_kinematics_world, joint, BoneTransforms, Crop, Frame, Pixel, Pose2D, Pose3D, Skeleton,
};
use crate::skinning::{heat_diffusion_weights, lbs, HeatConfig, SkinningWeights};
use crate::{Error, Result};

fn random_axis(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// A single skinned capsule limb and posed copies of it.
#[derive(Debug, Clone)]
pub struct CapsulePartSet {
    pub skeleton: Skeleton,
    pub rest: PartMesh,
    pub weights: SkinningWeights,
    pub examples: Vec<TlExample>,
}

/// Three-joint arm along +x skinned by heat diffusion, posed with a random
/// shoulder swing (≤ 30°) and elbow bend (0–100°).
pub fn capsule_part_dataset(count: usize, seed: u64) -> Result<CapsulePartSet> {
    let skeleton = Skeleton::new(
        vec!["shoulder".to_string(), "elbow".to_string(), "wrist".to_string()],
        vec![None, Some(0), Some(1)],
        vec![Vec3::zeros(), Vec3::new(0.3, 0.0, 0.0), Vec3::new(0.28, 0.0, 0.0)],
    )?;
    let rest_joints = skeleton.rest_positions();
    let rest = capsule(rest_joints[0], rest_joints[2], 0.05, 3, 14, 10, Part::Arms);
    let body = BodyMesh::new(vec![rest.clone()]);
    let weights = heat_diffusion_weights(
        &body,
        &skeleton,
        &Pose3D::new(rest_joints, Frame::World),
        &HeatConfig {
            voxel_res: 32,
            ..HeatConfig::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(count);
    for _ in 0..count {
        let mut t = BoneTransforms::identity(3);
        let swing = random_axis(&mut rng) * rng.random_range(0.0..30f64.to_radians());
        t.transforms[0].rotation = exp_so3(&swing);
        t.transforms[1].rotation = exp_so3(&(Vec3::z() * rng.random_range(0.0..100f64.to_radians())));
        let posed = lbs(&body, &weights, &t, &skeleton)?;
        examples.push(TlExample {
            pose: forward_kinematics(&skeleton, &t)?,
            rest: rest.vertices.clone(),
            posed: posed.vertices(),
        });
    }
    Ok(CapsulePartSet {
        skeleton,
        rest,
        weights,
        examples,
    })
}


/// Small network plan sized for [`capsule_part_dataset`] (three joints, 192
/// vertices).
pub fn toy_part_config() -> TlConfig {
    TlConfig {
        pose_in: 9,
        pose_hidden: 64,
        enc_channels: [8, 16, 16, 16],
        dec_channels: [16, 16, 8, 8, 3],
        ds_factors: [2, 2, 2, 1],
        ..TlConfig::default()
    }
}

/// Six-part capsule body around the rest pose of the canonical skeleton:
/// bare head, arms and lower legs, a shirt with sleeves, trouser legs and
/// shoes. Garments are open tubes enclosing the limbs they cover.
pub fn capsule_body(skeleton: &Skeleton) -> BodyMesh {
    use joint::*;
    let j = skeleton.rest_positions();
    let lerp = |a: usize, b: usize, t: f64| j[a] + (j[b] - j[a]) * t;
    let head = uv_sphere(j[HEAD] + Vec3::new(0.0, 0.06, 0.0), 0.11, 8, 16, Part::Head);
    let mut arms = Vec::new();
    let mut sleeves = Vec::new();
    let mut thighs = Vec::new();
    let mut shins = Vec::new();
    let mut shoes = Vec::new();
    for (sh, hip) in [(L_SHOULDER, L_HIP), (R_SHOULDER, R_HIP)] {
        let (el, wr) = (sh + 1, sh + 2);
        arms.push(capsule(lerp(sh, el, 0.25), j[el], 0.045, 3, 8, 12, Part::Arms));
        arms.push(capsule(j[el], j[wr] + (j[wr] - j[el]).normalize() * 0.08, 0.04, 3, 8, 12, Part::Arms));
        sleeves.push(tube(j[sh], lerp(sh, el, 1.05), 0.065, 10, 16, Part::Shirt));
        let (knee, ankle, toe) = (hip + 1, hip + 2, hip + 3);
        shins.push(capsule(j[hip] + Vec3::new(0.0, -0.02, 0.0), j[knee], 0.07, 3, 10, 12, Part::Legs));
        shins.push(capsule(j[knee], j[ankle], 0.055, 3, 10, 12, Part::Legs));
        thighs.push(tube(j[hip] + Vec3::new(0.0, 0.04, 0.0), lerp(hip, knee, 0.85), 0.09, 12, 16, Part::Pants));
        shoes.push(capsule(j[ankle] + Vec3::new(0.0, -0.02, -0.04), j[toe], 0.05, 3, 4, 12, Part::Shoes));
    }
    sleeves.push(tube(j[PELVIS], j[NECK], 0.15, 12, 24, Part::Shirt));
    BodyMesh::new(vec![
        head,
        PartMesh::concat(&arms, Part::Arms),
        PartMesh::concat(&sleeves, Part::Shirt),
        PartMesh::concat(&thighs, Part::Pants),
        PartMesh::concat(&shins, Part::Legs),
        PartMesh::concat(&shoes, Part::Shoes),
    ])
}

/// Inclusive-exclusive sampling range.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..self.max)
        } else {
            self.min
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::Invalid(alloc::format!("{what} range is invalid: [{}, {}]", self.min, self.max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Camera height above the court, meters.
    pub elevation: Range,
    /// Focal length, pixels.
    pub focal: Range,
    /// Camera distance behind the near sideline, meters.
    pub distance: Range,
    /// Clearance of the lowest joint for airborne players, meters.
    pub jump: Range,
    /// Probability that the player is airborne.
    pub airborne_probability: f64,
    /// Maximum rotation applied to each major joint, degrees.
    pub pose_jitter_deg: f64,
    /// Standard deviation of manual keypoint clicks, pixels.
    pub click_noise: f64,
    /// Minimum number of court keypoints that must be clickable.
    pub min_keypoints: usize,
    pub voxel_res: usize,
    pub max_attempts: usize,
    pub court: CourtConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 1280,
            height: 720,
            elevation: Range::new(5.0, 15.0),
            focal: Range::new(800.0, 3000.0),
            distance: Range::new(8.0, 20.0),
            jump: Range::new(0.0, 1.2),
            airborne_probability: 0.5,
            pose_jitter_deg: 25.0,
            click_noise: 1.0,
            min_keypoints: 6,
            voxel_res: 48,
            max_attempts: 500,
            court: CourtConfig::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.elevation.validate("elevation")?;
        self.focal.validate("focal")?;
        self.distance.validate("distance")?;
        self.jump.validate("jump")?;
        if !(self.elevation.min > 0.0 && self.focal.min > 0.0 && self.distance.min >= 0.0 && self.jump.min >= 0.0) {
            return Err(Error::Invalid("elevation, focal, distance and jump must be positive".into()));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Invalid("image is too small".into()));
        }
        if !(0.0..=1.0).contains(&self.airborne_probability) || !(self.click_noise >= 0.0) || !(self.pose_jitter_deg >= 0.0) {
            return Err(Error::Invalid("probability, noise and jitter must be non-negative".into()));
        }
        if self.min_keypoints < 4 {
            return Err(Error::Invalid("need at least 4 clickable keypoints".into()));
        }
        Ok(())
    }
}

/// A court, a broadcast camera and a posed, skinned player with ground truth
/// for every pipeline stage.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub court: CourtModel,
    pub camera: Camera,
    /// Noisy manual clicks of visible court keypoints: (pixel, court point).
    pub clicks: Vec<(Pixel, Vec3)>,
    pub mask: LineMask,
    pub skeleton: Skeleton,
    /// Local transforms; the root translation places the player in the world.
    pub transforms: BoneTransforms,
    pub pose3d: Pose3D,
    pub pose2d: Pose2D,
    /// Square window around the player for the pose maps.
    pub crop: Crop,
    pub jump: JumpInfo,
    pub rest_body: BodyMesh,
    pub weights: SkinningWeights,
    /// Skinned body in world coordinates.
    pub posed_body: BodyMesh,
}

impl SceneBundle {
    /// Root-relative pose as a pose estimator would predict it.
    pub fn root_relative_pose(&self) -> Pose3D {
        self.pose3d.to_root_relative()
    }

    /// Re-runs the generation invariants.
    pub fn self_check(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Invalid(alloc::format!("scene {} failed self-check: {msg}", self.seed)));
        self.camera.validate()?;
        for (p, q) in self.pose3d.positions.iter().zip(&self.pose2d.pixels) {
            if project(&self.camera, p)? != *q {
                return fail("2D pose is not the projection of the 3D pose");
            }
        }
        if self.jump.airborne != (self.jump.height > JUMP_THRESHOLD) {
            return fail("jump class disagrees with height");
        }
        let lowest = self.pose3d.positions.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        if (lowest - self.jump.height).abs() > 1e-9 {
            return fail("lowest joint is not at the jump height");
        }
        if self.clicks.len() < 4 || self.mask.count() == 0 {
            return fail("not enough calibration evidence");
        }
        if self.weights.num_vertices() != self.rest_body.num_vertices() || self.posed_body.num_vertices() != self.rest_body.num_vertices() {
            return fail("skinning sizes disagree");
        }
        Ok(())
    }
}

fn max_triangle_area(points: &[[f64; 2]]) -> f64 {
    let mut best: f64 = 0.0;
    for a in 0..points.len() {
        for b in a + 1..points.len() {
            for c in b + 1..points.len() {
                let (p, q, r) = (points[a], points[b], points[c]);
                let area = ((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])).abs() / 2.0;
                best = best.max(area);
            }
        }
    }
    best
}

fn inside(p: &Pixel, w: usize, h: usize, margin: f64) -> bool {
    p.x >= margin && p.y >= margin && p.x < w as f64 - margin && p.y < h as f64 - margin
}

fn sample_pose(skeleton: &Skeleton, cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> BoneTransforms {
    use joint::*;
    let mut t = BoneTransforms::identity(skeleton.len());
    let max = cfg.pose_jitter_deg.to_radians();
    for j in [SPINE, CHEST, NECK, HEAD, L_HIP, L_KNEE, R_HIP, R_KNEE, L_SHOULDER, L_ELBOW, R_SHOULDER, R_ELBOW] {
        if max > 0.0 {
            let w = random_axis(rng) * rng.random_range(0.0..max);
            t.transforms[j].rotation = exp_so3(&w);
        }
    }
    let heading = rng.random_range(0.0..core::f64::consts::TAU);
    t.transforms[PELVIS].rotation = exp_so3(&(Vec3::y() * heading));
    t
}

/// Generates one scene. A pure function of `(seed, cfg)`.
pub fn synth_scene(seed: u64, cfg: &SceneConfig) -> Result<SceneBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let court = make_court_model(&cfg.court)?;
    let (w, h) = (cfg.width, cfg.height);
    let (hl, hw) = (court.length / 2.0, court.width / 2.0);
    let noise = Normal::new(0.0, cfg.click_noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::Invalid(alloc::format!("{e}")))?;

    let mut chosen = None;
    for _ in 0..cfg.max_attempts {
        let eye = Vec3::new(
            rng.random_range(-0.5 * hl..0.5 * hl),
            cfg.elevation.sample(&mut rng),
            -hw - cfg.distance.sample(&mut rng),
        );
        let target = Vec3::new(rng.random_range(-0.8 * hl..0.8 * hl), 0.0, rng.random_range(-0.6 * hw..0.6 * hw));
        let f = cfg.focal.sample(&mut rng);
        let Ok(camera) = Camera::look_at(f, w as f64 / 2.0, h as f64 / 2.0, eye, target) else {
            continue;
        };
        let visible: Vec<(Pixel, Vec3)> = court
            .keypoints
            .iter()
            .filter_map(|k| project(&camera, k).ok().filter(|p| inside(p, w, h, 10.0)).map(|p| (p, *k)))
            .collect();
        if visible.len() < cfg.min_keypoints {
            continue;
        }
        let court_xy: Vec<[f64; 2]> = visible.iter().map(|(_, k)| [k.x, k.z]).collect();
        let image_xy: Vec<[f64; 2]> = visible.iter().map(|(p, _)| [p.x, p.y]).collect();
        if max_triangle_area(&court_xy) < 1.0 || max_triangle_area(&image_xy) < 500.0 {
            continue;
        }
        // player stands where a ray through the central image region meets the court
        let pix = Pixel::new(rng.random_range(0.3..0.7) * w as f64, rng.random_range(0.45..0.75) * h as f64);
        let Ok(hit) = solve_depth_for_height(&camera, &pix, 0.0) else { continue };
        if hit.world.x.abs() > hl || hit.world.z.abs() > hw {
            continue;
        }
        chosen = Some((camera, visible, hit.world));
        break;
    }
    let (camera, visible, foot) =
        chosen.ok_or_else(|| Error::Degenerate(alloc::format!("no feasible camera in {} attempts", cfg.max_attempts)))?;

    let clicks: Vec<(Pixel, Vec3)> = visible
        .iter()
        .map(|(p, k)| {
            let d = if cfg.click_noise > 0.0 {
                Pixel::new(noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                Pixel::zeros()
            };
            (p + d, *k)
        })
        .collect();
    let mask = rasterize_court_lines(&camera, &court, w, h);

    let skeleton = Skeleton::canonical();
    let mut transforms = sample_pose(&skeleton, cfg, &mut rng);
    let airborne = rng.random::<f64>() < cfg.airborne_probability;
    let height = if airborne {
        let lo = cfg.jump.min.max(JUMP_THRESHOLD + 1e-3);
        Range::new(lo, cfg.jump.max.max(lo)).sample(&mut rng)
    } else {
        0.0
    };
    let jump = JumpInfo::from_height(height);
    let relative = forward_kinematics(&skeleton, &transforms)?;
    let lowest = relative.positions.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    transforms.transforms[joint::PELVIS].translation = Vec3::new(foot.x, height - lowest, foot.z);
    let pose3d = forward_kinematics_world(&skeleton, &transforms)?;
    let pixels = pose3d.positions.iter().map(|p| project(&camera, p)).collect::<Result<Vec<_>>>()?;
    let pose2d = Pose2D::all_visible(pixels);

    let (mut lo, mut hi) = (Pixel::repeat(f64::INFINITY), Pixel::repeat(f64::NEG_INFINITY));
    for p in &pose2d.pixels {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let side = (hi - lo).max() * 1.25 + 8.0;
    let center = (lo + hi) / 2.0;
    let crop = Crop {
        x0: center.x - side / 2.0,
        y0: center.y - side / 2.0,
        side,
        size: CROP_SIZE,
    };

    let rest_body = capsule_body(&skeleton);
    let weights = heat_diffusion_weights(
        &rest_body,
        &skeleton,
        &Pose3D::new(skeleton.rest_positions(), Frame::World),
        &HeatConfig {
            voxel_res: cfg.voxel_res,
            ..HeatConfig::default()
        },
    )?;
    let posed_body = lbs(&rest_body, &weights, &transforms, &skeleton)?;

    let bundle = SceneBundle {
        seed,
        width: w,
        height: h,
        court,
        camera,
        clicks,
        mask,
        skeleton,
        transforms,
        pose3d,
        pose2d,
        crop,
        jump,
        rest_body,
        weights,
        posed_body,
    };
    bundle.self_check()?;
    Ok(bundle)
}

/// World transform that carries the root-relative frame to the scene.
pub fn root_placement(bundle: &SceneBundle) -> Rigid {
    Rigid::from_translation(bundle.pose3d.positions[joint::PELVIS])
}
