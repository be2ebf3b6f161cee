//! JSON records. Cameras and weights use explicit file layouts; poses, jump
//! state, transforms and crops use their serde form (vectors as `[x, y, z]`).

use std::path::Path;

use hoopmesh_core::camera::Camera;
use hoopmesh_core::geom::{Mat3, Vec3};
use hoopmesh_core::skeleton::Pixel;
use hoopmesh_core::skinning::SkinningWeights;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{read_text, write_bytes};
use crate::{Error, Result};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
}

/// Camera file: rotation is row-major, world-to-camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub f: f64,
    pub px: f64,
    pub py: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&Camera> for CameraFile {
    fn from(c: &Camera) -> Self {
        let r = &c.rotation;
        Self {
            f: c.f,
            px: c.px,
            py: c.py,
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

impl CameraFile {
    pub fn to_camera(&self) -> hoopmesh_core::Result<Camera> {
        let r = self.rotation;
        let rotation = Mat3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]);
        Camera::new(self.f, self.px, self.py, rotation, Vec3::from(self.translation))
    }
}

pub fn write_camera(path: &Path, camera: &Camera) -> Result<()> {
    write_json(path, &CameraFile::from(camera))
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    read_json::<CameraFile>(path)?.to_camera().map_err(|e| Error::format(path, e.to_string()))
}

/// One manual correspondence between an image pixel and a court point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Click {
    pub pixel: [f64; 2],
    pub court: [f64; 3],
}

pub fn clicks_to_file(clicks: &[(Pixel, Vec3)]) -> Vec<Click> {
    clicks
        .iter()
        .map(|(p, c)| Click {
            pixel: [p.x, p.y],
            court: [c.x, c.y, c.z],
        })
        .collect()
}

pub fn clicks_from_file(clicks: &[Click]) -> Vec<(Pixel, Vec3)> {
    clicks.iter().map(|c| (Pixel::new(c.pixel[0], c.pixel[1]), Vec3::from(c.court))).collect()
}

/// Sparse skinning weights as `(vertex, joint, weight)` triplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub num_vertices: usize,
    pub num_joints: usize,
    pub triplets: Vec<(usize, usize, f64)>,
}

impl From<&SkinningWeights> for WeightsFile {
    fn from(w: &SkinningWeights) -> Self {
        Self {
            num_vertices: w.num_vertices(),
            num_joints: w.num_joints,
            triplets: w.triplets(),
        }
    }
}

pub fn write_weights(path: &Path, w: &SkinningWeights) -> Result<()> {
    write_json(path, &WeightsFile::from(w))
}

pub fn read_weights(path: &Path) -> Result<SkinningWeights> {
    let f: WeightsFile = read_json(path)?;
    SkinningWeights::from_triplets(f.num_vertices, f.num_joints, &f.triplets).map_err(|e| Error::format(path, e.to_string()))
}
