//! Articulated skeleton, poses and forward kinematics.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::Vector2;

use crate::geom::{orthonormality_error, Rigid, Vec3};
use crate::{Error, Result};

pub const NUM_JOINTS: usize = 35;

/// Tolerance used when validating bone rotations.
pub const ROTATION_TOL: f64 = 1e-6;

/// Canonical joint list (schema version 1). Indices are stable.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "spine",
    "chest",
    "neck",
    "head",
    "head_top",
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_hip",
    "left_knee",
    "left_ankle",
    "left_toe",
    "right_hip",
    "right_knee",
    "right_ankle",
    "right_toe",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_thumb_tip",
    "left_index_tip",
    "left_middle_tip",
    "left_ring_tip",
    "left_pinky_tip",
    "right_thumb_tip",
    "right_index_tip",
    "right_middle_tip",
    "right_ring_tip",
    "right_pinky_tip",
];

pub const SKELETON_SCHEMA_VERSION: u32 = 1;

/// Named joint indices of the canonical skeleton.
pub mod joint {
    pub const PELVIS: usize = 0;
    pub const SPINE: usize = 1;
    pub const CHEST: usize = 2;
    pub const NECK: usize = 3;
    pub const HEAD: usize = 4;
    pub const HEAD_TOP: usize = 5;
    pub const NOSE: usize = 6;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;
    pub const L_TOE: usize = 14;
    pub const R_HIP: usize = 15;
    pub const R_KNEE: usize = 16;
    pub const R_ANKLE: usize = 17;
    pub const R_TOE: usize = 18;
    pub const L_SHOULDER: usize = 19;
    pub const L_ELBOW: usize = 20;
    pub const L_WRIST: usize = 21;
    pub const R_SHOULDER: usize = 22;
    pub const R_ELBOW: usize = 23;
    pub const R_WRIST: usize = 24;
}

/// The 14 LSP evaluation joints expressed in the canonical schema, in LSP
/// order (right ankle first, head top last).
pub const LSP14: [usize; 14] = [
    joint::R_ANKLE,
    joint::R_KNEE,
    joint::R_HIP,
    joint::L_HIP,
    joint::L_KNEE,
    joint::L_ANKLE,
    joint::R_WRIST,
    joint::R_ELBOW,
    joint::R_SHOULDER,
    joint::L_SHOULDER,
    joint::L_ELBOW,
    joint::L_WRIST,
    joint::NECK,
    joint::HEAD_TOP,
];

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    /// Parent index per joint; `None` for the root.
    pub parent: Vec<Option<usize>>,
    /// Offset of each joint from its parent in the parent frame, meters.
    pub rest_offsets: Vec<Vec3>,
}

impl Skeleton {
    /// Builds a skeleton and checks that it is a tree in topological order
    /// with a single root at index 0.
    pub fn new(
        joint_names: Vec<String>,
        parent: Vec<Option<usize>>,
        rest_offsets: Vec<Vec3>,
    ) -> Result<Self> {
        let n = joint_names.len();
        if parent.len() != n || rest_offsets.len() != n {
            return Err(Error::CountMismatch {
                what: "skeleton entries",
                expected: n,
                got: parent.len().min(rest_offsets.len()),
            });
        }
        if n == 0 || parent[0].is_some() {
            return Err(Error::Invalid("skeleton root must be joint 0".to_string()));
        }
        for (j, p) in parent.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => {
                    return Err(Error::Invalid(alloc::format!(
                        "joint {j} must have a parent with a smaller index"
                    )))
                }
            }
        }
        if rest_offsets.iter().any(|o| !o.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("rest offsets"));
        }
        Ok(Self {
            joint_names,
            parent,
            rest_offsets,
        })
    }

    /// The canonical 35-joint basketball skeleton, y up, facing +z, with the
    /// pelvis at the origin.
    pub fn canonical() -> Self {
        use joint::*;
        let mut parent = [None; NUM_JOINTS];
        let mut off = [Vec3::zeros(); NUM_JOINTS];
        let mut set = |j: usize, p: usize, o: [f64; 3]| {
            parent[j] = Some(p);
            off[j] = Vec3::new(o[0], o[1], o[2]);
        };
        set(SPINE, PELVIS, [0.0, 0.12, 0.0]);
        set(CHEST, SPINE, [0.0, 0.22, 0.0]);
        set(NECK, CHEST, [0.0, 0.22, 0.0]);
        set(HEAD, NECK, [0.0, 0.10, 0.0]);
        set(HEAD_TOP, HEAD, [0.0, 0.16, 0.0]);
        set(NOSE, HEAD, [0.0, 0.05, 0.10]);
        set(7, HEAD, [0.035, 0.08, 0.08]);
        set(8, HEAD, [-0.035, 0.08, 0.08]);
        set(9, HEAD, [0.075, 0.06, 0.0]);
        set(10, HEAD, [-0.075, 0.06, 0.0]);
        for (side, sx) in [(0usize, 1.0), (1, -1.0)] {
            let hip = if side == 0 { L_HIP } else { R_HIP };
            set(hip, PELVIS, [sx * 0.11, -0.06, 0.0]);
            set(hip + 1, hip, [0.0, -0.46, 0.0]);
            set(hip + 2, hip + 1, [0.0, -0.45, 0.0]);
            set(hip + 3, hip + 2, [0.0, -0.06, 0.16]);
            let sh = if side == 0 { L_SHOULDER } else { R_SHOULDER };
            set(sh, CHEST, [sx * 0.20, 0.17, 0.0]);
            set(sh + 1, sh, [sx * 0.31, 0.0, 0.0]);
            set(sh + 2, sh + 1, [sx * 0.28, 0.0, 0.0]);
            let tips = 25 + side * 5;
            let fingers = [
                [0.06, 0.0, 0.06],
                [0.18, 0.0, 0.03],
                [0.19, 0.0, 0.0],
                [0.18, 0.0, -0.02],
                [0.15, 0.0, -0.04],
            ];
            for (k, f) in fingers.iter().enumerate() {
                set(tips + k, sh + 2, [sx * f[0], f[1], f[2]]);
            }
        }
        Self {
            joint_names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            parent: parent.to_vec(),
            rest_offsets: off.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// (parent, child) pairs in joint order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(j, p)| p.map(|p| (p, j)))
            .collect()
    }

    pub fn children(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.parent
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == Some(j))
            .map(|(c, _)| c)
    }

    /// True when `ancestor` lies on the path from `j` to the root (inclusive).
    pub fn is_ancestor(&self, ancestor: usize, mut j: usize) -> bool {
        loop {
            if j == ancestor {
                return true;
            }
            match self.parent[j] {
                Some(p) => j = p,
                None => return false,
            }
        }
    }

    /// Joint positions with identity local transforms.
    pub fn rest_positions(&self) -> Vec<Vec3> {
        let mut pos: Vec<Vec3> = Vec::with_capacity(self.len());
        for j in 0..self.len() {
            let base = self.parent[j].map(|p| pos[p]).unwrap_or_else(Vec3::zeros);
            pos.push(base + self.rest_offsets[j]);
        }
        pos
    }
}

/// Local (parent-relative) rigid transform per joint.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoneTransforms {
    pub transforms: Vec<Rigid>,
}

impl BoneTransforms {
    pub fn identity(n: usize) -> Self {
        Self {
            transforms: alloc::vec![Rigid::identity(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn validate(&self, joints: usize) -> Result<()> {
        if self.transforms.len() != joints {
            return Err(Error::CountMismatch {
                what: "bone transforms",
                expected: joints,
                got: self.transforms.len(),
            });
        }
        for (j, t) in self.transforms.iter().enumerate() {
            let dev = orthonormality_error(&t.rotation);
            if !(dev <= ROTATION_TOL) {
                return Err(Error::NotOrthonormal {
                    joint: j,
                    deviation: dev,
                });
            }
            if !t.translation.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("bone translation"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Frame {
    RootRelative,
    World,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pose3D {
    pub positions: Vec<Vec3>,
    pub frame: Frame,
}

impl Pose3D {
    pub fn new(positions: Vec<Vec3>, frame: Frame) -> Self {
        Self { positions, frame }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Translates so that joint 0 (pelvis) sits at the origin.
    pub fn to_root_relative(&self) -> Pose3D {
        let root = self.positions.first().copied().unwrap_or_else(Vec3::zeros);
        Pose3D::new(
            self.positions.iter().map(|p| p - root).collect(),
            Frame::RootRelative,
        )
    }

    pub fn translated(&self, t: &Vec3, frame: Frame) -> Pose3D {
        Pose3D::new(self.positions.iter().map(|p| p + t).collect(), frame)
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

pub type Pixel = Vector2<f64>;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pose2D {
    pub pixels: Vec<Pixel>,
    pub visibility: Vec<bool>,
}

impl Pose2D {
    pub fn new(pixels: Vec<Pixel>, visibility: Vec<bool>) -> Self {
        Self { pixels, visibility }
    }

    pub fn all_visible(pixels: Vec<Pixel>) -> Self {
        let n = pixels.len();
        Self::new(pixels, alloc::vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Square crop window mapping full-frame pixels to a `size × size` crop.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Crop {
    pub x0: f64,
    pub y0: f64,
    /// Side length of the window in frame pixels.
    pub side: f64,
    /// Side length of the crop in crop pixels.
    pub size: f64,
}

impl Crop {
    pub fn to_crop(&self, p: &Pixel) -> Pixel {
        let s = self.size / self.side;
        Pixel::new((p.x - self.x0) * s, (p.y - self.y0) * s)
    }

    pub fn to_frame(&self, p: &Pixel) -> Pixel {
        let s = self.side / self.size;
        Pixel::new(p.x * s + self.x0, p.y * s + self.y0)
    }

    pub fn pose_to_crop(&self, pose: &Pose2D) -> Pose2D {
        Pose2D::new(
            pose.pixels.iter().map(|p| self.to_crop(p)).collect(),
            pose.visibility.clone(),
        )
    }

    pub fn pose_to_frame(&self, pose: &Pose2D) -> Pose2D {
        Pose2D::new(
            pose.pixels.iter().map(|p| self.to_frame(p)).collect(),
            pose.visibility.clone(),
        )
    }
}

/// Global (world) transform of every joint frame.
pub fn global_transforms(skeleton: &Skeleton, transforms: &BoneTransforms) -> Result<Vec<Rigid>> {
    transforms.validate(skeleton.len())?;
    let mut globals: Vec<Rigid> = Vec::with_capacity(skeleton.len());
    for j in 0..skeleton.len() {
        let local = Rigid::from_translation(skeleton.rest_offsets[j]).compose(&transforms.transforms[j]);
        let g = match skeleton.parent[j] {
            Some(p) => globals[p].compose(&local),
            None => local,
        };
        globals.push(g);
    }
    Ok(globals)
}

/// Joint positions in the world frame.
pub fn forward_kinematics_world(skeleton: &Skeleton, transforms: &BoneTransforms) -> Result<Pose3D> {
    let globals = global_transforms(skeleton, transforms)?;
    Ok(Pose3D::new(
        globals.iter().map(|g| g.translation).collect(),
        Frame::World,
    ))
}

/// Joint positions relative to the pelvis.
pub fn forward_kinematics(skeleton: &Skeleton, transforms: &BoneTransforms) -> Result<Pose3D> {
    Ok(forward_kinematics_world(skeleton, transforms)?.to_root_relative())
}

/// Euclidean length of each `(a, b)` joint pair.
pub fn bone_lengths(pose: &Pose3D, edges: &[(usize, usize)]) -> Result<Vec<f64>> {
    let n = pose.len();
    edges
        .iter()
        .map(|&(a, b)| {
            for i in [a, b] {
                if i >= n {
                    return Err(Error::IndexOutOfRange {
                        what: "pose",
                        index: i,
                        len: n,
                    });
                }
            }
            Ok((pose.positions[a] - pose.positions[b]).norm())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::exp_so3;
    use nalgebra::Matrix4;

    fn homogeneous(r: &Rigid) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&r.translation);
        m
    }

    fn translation4(t: &Vec3) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
        m
    }

    #[test]
    fn canonical_skeleton_is_valid_tree() {
        let s = Skeleton::canonical();
        assert_eq!(s.len(), NUM_JOINTS);
        let rebuilt = Skeleton::new(s.joint_names.clone(), s.parent.clone(), s.rest_offsets.clone());
        assert!(rebuilt.is_ok());
        assert_eq!(s.edges().len(), NUM_JOINTS - 1);
    }

    #[test]
    fn identity_transforms_give_rest_pose() {
        let s = Skeleton::canonical();
        let pose = forward_kinematics(&s, &BoneTransforms::identity(s.len())).unwrap();
        assert_eq!(pose.positions, s.rest_positions());
    }

    #[test]
    fn root_translation_shifts_world_only() {
        let s = Skeleton::canonical();
        let mut bt = BoneTransforms::identity(s.len());
        let t = Vec3::new(1.0, -2.0, 3.5);
        bt.transforms[0].translation = t;
        let rr = forward_kinematics(&s, &bt).unwrap();
        let world = forward_kinematics_world(&s, &bt).unwrap();
        let rest = s.rest_positions();
        for j in 0..s.len() {
            assert!((rr.positions[j] - rest[j]).norm() < 1e-12);
            assert!((world.positions[j] - (rest[j] + t)).norm() < 1e-12);
        }
    }

    #[test]
    fn chain_matches_homogeneous_oracle() {
        let offsets = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 0.3, 0.0),
            Vec3::new(0.1, 0.25, 0.0),
            Vec3::new(0.0, 0.2, 0.05),
        ];
        let s = Skeleton::new(
            (0..4).map(|i| alloc::format!("j{i}")).collect(),
            alloc::vec![None, Some(0), Some(1), Some(2)],
            offsets.to_vec(),
        )
        .unwrap();
        let axes = [
            Vec3::new(0.2, -0.4, 0.9),
            Vec3::new(-1.1, 0.3, 0.2),
            Vec3::new(0.5, 0.5, -0.5),
            Vec3::new(0.0, 1.3, 0.4),
        ];
        let bt = BoneTransforms {
            transforms: axes
                .iter()
                .enumerate()
                .map(|(i, a)| Rigid::new(exp_so3(a), Vec3::new(0.01 * i as f64, 0.0, -0.02)))
                .collect(),
        };
        let pose = forward_kinematics_world(&s, &bt).unwrap();
        let mut acc = Matrix4::identity();
        for j in 0..4 {
            acc = acc * translation4(&offsets[j]) * homogeneous(&bt.transforms[j]);
            let p = Vec3::new(acc[(0, 3)], acc[(1, 3)], acc[(2, 3)]);
            assert!((p - pose.positions[j]).norm() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_transforms() {
        let s = Skeleton::canonical();
        let short = BoneTransforms::identity(3);
        assert!(matches!(
            forward_kinematics(&s, &short),
            Err(Error::CountMismatch { .. })
        ));
        let mut skewed = BoneTransforms::identity(s.len());
        skewed.transforms[4].rotation[(0, 1)] = 1e-3;
        assert!(matches!(
            forward_kinematics(&s, &skewed),
            Err(Error::NotOrthonormal { joint: 4, .. })
        ));
    }

    #[test]
    fn bone_length_basics() {
        let pose = Pose3D::new(
            alloc::vec![Vec3::zeros(), Vec3::new(0.0, 0.5, 0.0)],
            Frame::RootRelative,
        );
        assert_eq!(bone_lengths(&pose, &[(0, 1)]).unwrap(), alloc::vec![0.5]);
        assert!(bone_lengths(&pose, &[(0, 2)]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bone_lengths_are_isometry_invariant(
                seed in proptest::collection::vec(-1.0f64..1.0, NUM_JOINTS * 3),
                axis in proptest::array::uniform3(-3.0f64..3.0),
                shift in proptest::array::uniform3(-10.0f64..10.0),
            ) {
                let s = Skeleton::canonical();
                let pose = Pose3D::new(
                    seed.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
                    Frame::World,
                );
                let r = exp_so3(&Vec3::from(axis));
                let t = Vec3::from(shift);
                let moved = Pose3D::new(pose.positions.iter().map(|p| r * p + t).collect(), Frame::World);
                let edges = s.edges();
                let a = bone_lengths(&pose, &edges).unwrap();
                let b = bone_lengths(&moved, &edges).unwrap();
                for ((x, y), &(i, j)) in a.iter().zip(&b).zip(&edges) {
                    // direct per-edge norm oracle
                    let d = pose.positions[i] - pose.positions[j];
                    let oracle = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
                    prop_assert!((x - oracle).abs() <= 1e-15 * (1.0 + oracle));
                    prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x));
                }
            }

            #[test]
            fn fk_is_rigidly_equivariant(
                axis in proptest::array::uniform3(-3.0f64..3.0),
                shift in proptest::array::uniform3(-10.0f64..10.0),
                bend in proptest::collection::vec(-0.8f64..0.8, NUM_JOINTS * 3),
            ) {
                let s = Skeleton::canonical();
                let mut bt = BoneTransforms {
                    transforms: bend.chunks(3).map(|c| Rigid::from_axis_angle(Vec3::new(c[0], c[1], c[2]))).collect(),
                };
                let base = forward_kinematics_world(&s, &bt).unwrap();
                let g = Rigid::new(exp_so3(&Vec3::from(axis)), Vec3::from(shift));
                bt.transforms[0] = g.compose(&bt.transforms[0]);
                let moved = forward_kinematics_world(&s, &bt).unwrap();
                for (p, q) in base.positions.iter().zip(&moved.positions) {
                    prop_assert!((g.apply(p) - q).norm() < 1e-9);
                }
            }
        }
    }
}
