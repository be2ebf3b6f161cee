//! Jump-aware placement of a root-relative pose on (or above) the court.

#[allow(unused_imports)]
use num_traits::Float;
use crate::camera::Camera;
use crate::codec::JumpInfo;
use crate::geom::Vec3;
use crate::skeleton::{Frame, Pixel, Pose2D, Pose3D};
use crate::{Error, Result};

/// Visible joint with the smallest up (y) coordinate in the root-relative
/// pose; exact ties go to the joint lower in the image (larger pixel y).
pub fn lowest_joint(pose2d: &Pose2D, pose3d: &Pose3D) -> Result<usize> {
    if pose2d.len() != pose3d.len() {
        return Err(Error::CountMismatch {
            what: "joints",
            expected: pose3d.len(),
            got: pose2d.len(),
        });
    }
    let mut best: Option<usize> = None;
    for j in 0..pose3d.len() {
        if !pose2d.visibility[j] {
            continue;
        }
        best = match best {
            None => Some(j),
            Some(b) => {
                let (yj, yb) = (pose3d.positions[j].y, pose3d.positions[b].y);
                if yj < yb || (yj == yb && pose2d.pixels[j].y > pose2d.pixels[b].y) {
                    Some(j)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.ok_or(Error::NoVisibleJoints)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Depth along the camera z axis.
    pub z_c: f64,
    pub world: Vec3,
}

/// Intersects the viewing ray of `pixel` with the horizontal plane `y = h`.
///
/// With `V_c = z_c d` for the bearing `d`, the plane condition
/// `R₂ · (V_c − T) = h` (R₂ the second column of R) is linear in `z_c`.
pub fn solve_depth_for_height(camera: &Camera, pixel: &Pixel, h: f64) -> Result<RayHit> {
    let d = camera.ray(pixel);
    let r2 = camera.rotation.column(1).into_owned();
    let denom = r2.dot(&d);
    if denom.abs() <= 1e-9 {
        return Err(Error::ParallelRay);
    }
    let z_c = (h + r2.dot(&camera.translation)) / denom;
    if !(z_c > 0.0) {
        return Err(Error::BehindCamera { z: z_c });
    }
    let v_c = d * z_c;
    let world = camera.rotation.transpose() * (v_c - camera.translation);
    Ok(RayHit { z_c, world })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub pose: Pose3D,
    /// Offset added to the root-relative pose (and to meshes in its frame).
    pub translation: Vec3,
    pub lowest_joint: usize,
    pub effective_height: f64,
}

/// Places the player so that its lowest joint sits where the camera ray
/// through that joint's pixel reaches the (class-gated) jump height.
/// `pose2d` is in full-frame pixels.
pub fn place_player(camera: &Camera, pose2d: &Pose2D, pose3d: &Pose3D, jump: &JumpInfo) -> Result<Placement> {
    camera.validate()?;
    let lowest = lowest_joint(pose2d, pose3d)?;
    let h = jump.effective_height();
    let hit = solve_depth_for_height(camera, &pose2d.pixels[lowest], h)?;
    let translation = hit.world - pose3d.positions[lowest];
    Ok(Placement {
        pose: pose3d.translated(&translation, Frame::World),
        translation,
        lowest_joint: lowest,
        effective_height: h,
    })
}
