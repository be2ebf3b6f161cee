//! Skinning weights from voxel heat diffusion, linear blend skinning and
//! fitting bone transforms to 2D/3D keypoints.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix2x3};

use crate::camera::Camera;
use crate::geom::{exp_so3, log_so3, right_jacobian_inv, skew, Mat3, Rigid, Vec3};
use crate::mesh::BodyMesh;
use crate::optim::{levenberg_marquardt, LmConfig, Termination};
use crate::skeleton::{global_transforms, BoneTransforms, Frame, Pose2D, Pose3D, Skeleton};
use crate::{Error, Result};

/// Influences kept per vertex.
pub const MAX_INFLUENCES: usize = 4;

pub const DEFAULT_VOXEL_RES: usize = 64;

/// Sparse vertices × joints weight matrix; each row holds at most
/// [`MAX_INFLUENCES`] `(joint, weight)` pairs sorted by joint and summing to 1.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SkinningWeights {
    pub num_joints: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SkinningWeights {
    pub fn new(num_joints: usize, mut rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for (v, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|e| e.0);
            if row.len() > MAX_INFLUENCES {
                return Err(Error::Invalid(alloc::format!(
                    "vertex {v} has {} influences, at most {MAX_INFLUENCES} allowed",
                    row.len()
                )));
            }
            let mut sum = 0.0;
            for (i, &(j, w)) in row.iter().enumerate() {
                if j >= num_joints {
                    return Err(Error::IndexOutOfRange {
                        what: "skinning joint",
                        index: j,
                        len: num_joints,
                    });
                }
                if i > 0 && row[i - 1].0 == j {
                    return Err(Error::Invalid(alloc::format!("vertex {v} lists joint {j} twice")));
                }
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::Invalid(alloc::format!("vertex {v} has weight {w}")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Invalid(alloc::format!("weights of vertex {v} sum to {sum}")));
            }
        }
        Ok(Self { num_joints, rows })
    }

    /// Builds from `(vertex, joint, weight)` triplets; zero weights are dropped.
    pub fn from_triplets(num_vertices: usize, num_joints: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows = vec![Vec::new(); num_vertices];
        for &(v, j, w) in triplets {
            if v >= num_vertices {
                return Err(Error::IndexOutOfRange {
                    what: "skinning vertex",
                    index: v,
                    len: num_vertices,
                });
            }
            if w != 0.0 {
                rows[v].push((j, w));
            }
        }
        Self::new(num_joints, rows)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(v, row)| row.iter().map(move |&(j, w)| (v, j, w)))
            .collect()
    }

    pub fn num_vertices(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, v: usize, j: usize) -> f64 {
        self.rows[v].iter().find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.num_joints);
        for (v, j, w) in self.triplets() {
            m[(v, j)] = w;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeatConfig {
    /// Cells along the longest bounding-box side.
    pub voxel_res: usize,
    /// Joints that receive weights. `None` means every joint with children;
    /// such bones are skipped when they miss the volume, explicitly listed
    /// ones raise [`Error::BoneOutsideVolume`].
    pub bones: Option<Vec<usize>>,
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for HeatConfig {
    fn default() -> Self {
        Self {
            voxel_res: DEFAULT_VOXEL_RES,
            bones: None,
            tolerance: 1e-6,
            max_sweeps: 50_000,
        }
    }
}

struct VoxelGrid {
    origin: Vec3,
    h: f64,
    dims: [usize; 3],
}

impl VoxelGrid {
    fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    fn index(&self, i: [usize; 3]) -> usize {
        (i[2] * self.dims[1] + i[1]) * self.dims[0] + i[0]
    }

    fn cell(&self, p: &Vec3) -> Option<usize> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let g = ((p[a] - self.origin[a]) / self.h).floor();
            if !(g >= 0.0 && g < self.dims[a] as f64) {
                return None;
            }
            c[a] = g as usize;
        }
        Some(self.index(c))
    }

    fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let [nx, ny, nz] = self.dims;
        let x = idx % nx;
        let y = (idx / nx) % ny;
        let z = idx / (nx * ny);
        let cand = [
            (x > 0).then(|| idx - 1),
            (x + 1 < nx).then(|| idx + 1),
            (y > 0).then(|| idx - nx),
            (y + 1 < ny).then(|| idx + nx),
            (z > 0).then(|| idx - nx * ny),
            (z + 1 < nz).then(|| idx + nx * ny),
        ];
        cand.into_iter().flatten()
    }
}

/// Marks surface voxels by dense barycentric sampling of every triangle and
/// returns the volume mask (surface plus enclosed cells).
fn voxelize(grid: &VoxelGrid, verts: &[Vec3], faces: &[[usize; 3]]) -> Vec<bool> {
    let mut surface = vec![false; grid.len()];
    for f in faces {
        let (a, b, c) = (verts[f[0]], verts[f[1]], verts[f[2]]);
        let longest = (b - a).norm().max((c - a).norm()).max((c - b).norm());
        let m = ((longest / (0.5 * grid.h)).ceil() as usize).max(1);
        for i in 0..=m {
            for j in 0..=(m - i) {
                let p = a + (b - a) * (i as f64 / m as f64) + (c - a) * (j as f64 / m as f64);
                if let Some(k) = grid.cell(&p) {
                    surface[k] = true;
                }
            }
        }
    }
    // flood the outside from the (always empty) padded border
    let mut outside = vec![false; grid.len()];
    let mut queue = VecDeque::new();
    let [nx, ny, nz] = grid.dims;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz {
                    let k = grid.index([x, y, z]);
                    if !surface[k] && !outside[k] {
                        outside[k] = true;
                        queue.push_back(k);
                    }
                }
            }
        }
    }
    while let Some(k) = queue.pop_front() {
        for n in grid.neighbors(k) {
            if !surface[n] && !outside[n] {
                outside[n] = true;
                queue.push_back(n);
            }
        }
    }
    outside.iter().map(|o| !o).collect()
}

/// Initializes skinning weights by steady-state heat diffusion inside the
/// voxelized rest mesh. Bone `j` is the set of segments from joint `j` to its
/// children; its voxels hold heat 1 for `j` and 0 for every other bone (a
/// voxel shared by `k` bones holds `1/k` for each). Free interior voxels are
/// relaxed with Jacobi sweeps; vertex weights are sampled trilinearly, pruned
/// to the largest four and renormalized.
pub fn heat_diffusion_weights(
    mesh: &BodyMesh,
    skeleton: &Skeleton,
    rest_pose: &Pose3D,
    cfg: &HeatConfig,
) -> Result<SkinningWeights> {
    let nj = skeleton.len();
    if rest_pose.len() != nj {
        return Err(Error::CountMismatch {
            what: "rest pose joints",
            expected: nj,
            got: rest_pose.len(),
        });
    }
    if cfg.voxel_res < 2 {
        return Err(Error::Invalid("voxel_res must be at least 2".into()));
    }
    let (verts, faces) = mesh.merged();
    if verts.is_empty() || faces.is_empty() {
        return Err(Error::EmptyVoxelization);
    }
    let mut lo = verts[0];
    let mut hi = verts[0];
    for v in &verts {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    let extent = hi - lo;
    let longest = extent.max();
    if !(longest > 0.0) || !longest.is_finite() {
        return Err(Error::EmptyVoxelization);
    }
    let h = longest / cfg.voxel_res as f64;
    let mut dims = [0usize; 3];
    for a in 0..3 {
        dims[a] = ((extent[a] / h).ceil() as usize).max(1) + 2;
    }
    let grid = VoxelGrid {
        origin: lo - Vec3::repeat(h),
        h,
        dims,
    };
    let volume = voxelize(&grid, &verts, &faces);
    let vol_cells: Vec<usize> = (0..grid.len()).filter(|&k| volume[k]).collect();
    if vol_cells.is_empty() {
        return Err(Error::EmptyVoxelization);
    }

    let explicit = cfg.bones.is_some();
    let candidates: Vec<usize> = match &cfg.bones {
        Some(b) => {
            for &j in b {
                if j >= nj {
                    return Err(Error::IndexOutOfRange {
                        what: "bone",
                        index: j,
                        len: nj,
                    });
                }
            }
            b.clone()
        }
        None => (0..nj).filter(|&j| skeleton.children(j).next().is_some()).collect(),
    };
    let pos = &rest_pose.positions;
    let mut bones = Vec::new();
    let mut bone_cells: Vec<Vec<usize>> = Vec::new();
    for &j in &candidates {
        let mut cells = Vec::new();
        let mut mark = |p: &Vec3| {
            if let Some(k) = grid.cell(p) {
                if volume[k] {
                    cells.push(k);
                }
            }
        };
        let children: Vec<usize> = skeleton.children(j).collect();
        if children.is_empty() {
            mark(&pos[j]);
        }
        for c in children {
            let seg = pos[c] - pos[j];
            let steps = ((seg.norm() / (0.25 * h)).ceil() as usize).max(1);
            for s in 0..=steps {
                mark(&(pos[j] + seg * (s as f64 / steps as f64)));
            }
        }
        cells.sort_unstable();
        cells.dedup();
        if cells.is_empty() {
            if explicit {
                return Err(Error::BoneOutsideVolume(j));
            }
            continue;
        }
        bones.push(j);
        bone_cells.push(cells);
    }
    if bones.is_empty() {
        return Err(Error::BoneOutsideVolume(candidates.first().copied().unwrap_or(0)));
    }
    let nb = bones.len();

    // dense per-volume-cell values, `nb` channels each
    let mut slot = vec![usize::MAX; grid.len()];
    for (i, &k) in vol_cells.iter().enumerate() {
        slot[k] = i;
    }
    let nv = vol_cells.len();
    let mut fixed = vec![false; nv];
    let mut hits = vec![0u32; nv];
    for cells in &bone_cells {
        for &k in cells {
            hits[slot[k]] += 1;
        }
    }
    let mut u = vec![0.0; nv * nb];
    for (b, cells) in bone_cells.iter().enumerate() {
        for &k in cells {
            let i = slot[k];
            fixed[i] = true;
            u[i * nb + b] = 1.0 / hits[i] as f64;
        }
    }
    let nbrs: Vec<Vec<u32>> = vol_cells
        .iter()
        .map(|&k| grid.neighbors(k).filter(|&n| volume[n]).map(|n| slot[n] as u32).collect())
        .collect();

    // start from the nearest source to cut the number of sweeps
    let mut seen = fixed.clone();
    let mut queue: VecDeque<usize> = (0..nv).filter(|&i| fixed[i]).collect();
    while let Some(i) = queue.pop_front() {
        for &n in &nbrs[i] {
            let n = n as usize;
            if !seen[n] {
                seen[n] = true;
                let (src, dst) = (i * nb, n * nb);
                for b in 0..nb {
                    u[dst + b] = u[src + b];
                }
                queue.push_back(n);
            }
        }
    }

    let mut next = u.clone();
    for _ in 0..cfg.max_sweeps {
        let mut change: f64 = 0.0;
        for i in 0..nv {
            if fixed[i] || nbrs[i].is_empty() {
                continue;
            }
            let inv = 1.0 / nbrs[i].len() as f64;
            for b in 0..nb {
                let mut s = 0.0;
                for &n in &nbrs[i] {
                    s += u[n as usize * nb + b];
                }
                let v = s * inv;
                change = change.max((v - u[i * nb + b]).abs());
                next[i * nb + b] = v;
            }
        }
        core::mem::swap(&mut u, &mut next);
        if change < cfg.tolerance {
            break;
        }
    }

    // carry values to outside cells so trilinear lookups near the surface
    // never read unset data
    let mut field = vec![0.0; grid.len() * nb];
    let mut set = vec![false; grid.len()];
    let mut queue = VecDeque::new();
    for (i, &k) in vol_cells.iter().enumerate() {
        field[k * nb..(k + 1) * nb].copy_from_slice(&u[i * nb..(i + 1) * nb]);
        set[k] = true;
        queue.push_back(k);
    }
    while let Some(k) = queue.pop_front() {
        for n in grid.neighbors(k) {
            if !set[n] {
                set[n] = true;
                field.copy_within(k * nb..(k + 1) * nb, n * nb);
                queue.push_back(n);
            }
        }
    }

    let mut rows = Vec::with_capacity(verts.len());
    let mut vals = vec![0.0; nb];
    for p in &verts {
        vals.iter_mut().for_each(|v| *v = 0.0);
        let mut i0 = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let g = (p[a] - grid.origin[a]) / h - 0.5;
            let base = g.floor().clamp(0.0, (grid.dims[a] - 2) as f64);
            i0[a] = base as usize;
            t[a] = (g - base).clamp(0.0, 1.0);
        }
        for corner in 0..8 {
            let mut w = 1.0;
            let mut c = i0;
            for a in 0..3 {
                if corner >> a & 1 == 1 {
                    c[a] += 1;
                    w *= t[a];
                } else {
                    w *= 1.0 - t[a];
                }
            }
            if w == 0.0 {
                continue;
            }
            let k = grid.index(c);
            for b in 0..nb {
                vals[b] += w * field[k * nb + b];
            }
        }
        let mut order: Vec<usize> = (0..nb).filter(|&b| vals[b] > 0.0).collect();
        order.sort_by(|&x, &y| vals[y].total_cmp(&vals[x]).then(x.cmp(&y)));
        order.truncate(MAX_INFLUENCES);
        let sum: f64 = order.iter().map(|&b| vals[b]).sum();
        let row = if sum > 1e-12 {
            order.iter().map(|&b| (bones[b], vals[b] / sum)).collect()
        } else {
            vec![(nearest_bone(skeleton, pos, &bones, p), 1.0)]
        };
        rows.push(row);
    }
    SkinningWeights::new(nj, rows)
}

fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let d = b - a;
    let l2 = d.norm_squared();
    let t = if l2 > 0.0 { ((p - a).dot(&d) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + d * t)).norm()
}

fn nearest_bone(skeleton: &Skeleton, pos: &[Vec3], bones: &[usize], p: &Vec3) -> usize {
    let mut best = (f64::INFINITY, bones[0]);
    for &j in bones {
        let mut d = (p - pos[j]).norm();
        for c in skeleton.children(j) {
            d = d.min(point_segment_distance(p, &pos[j], &pos[c]));
        }
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

/// Global rest-to-posed transform of every joint.
pub fn skin_transforms(skeleton: &Skeleton, transforms: &BoneTransforms) -> Result<Vec<Rigid>> {
    let posed = global_transforms(skeleton, transforms)?;
    let rest = global_transforms(skeleton, &BoneTransforms::identity(skeleton.len()))?;
    Ok(posed.iter().zip(&rest).map(|(m, r)| m.compose(&r.inverse())).collect())
}

/// Linear blend skinning of the rest mesh.
pub fn lbs(rest: &BodyMesh, weights: &SkinningWeights, transforms: &BoneTransforms, skeleton: &Skeleton) -> Result<BodyMesh> {
    if weights.num_vertices() != rest.num_vertices() {
        return Err(Error::CountMismatch {
            what: "skinning weight rows",
            expected: rest.num_vertices(),
            got: weights.num_vertices(),
        });
    }
    if weights.num_joints != skeleton.len() {
        return Err(Error::CountMismatch {
            what: "skinning weight columns",
            expected: skeleton.len(),
            got: weights.num_joints,
        });
    }
    let g = skin_transforms(skeleton, transforms)?;
    let posed: Vec<Vec3> = rest
        .vertices()
        .iter()
        .zip(&weights.rows)
        .map(|(v, row)| row.iter().fold(Vec3::zeros(), |acc, &(j, w)| acc + w * g[j].apply(v)))
        .collect();
    rest.with_vertices(&posed)
}

/// A rest mesh rigged to a skeleton.
#[derive(Debug, Clone)]
pub struct SkinModel {
    pub rest: BodyMesh,
    pub weights: SkinningWeights,
    pub skeleton: Skeleton,
}

impl SkinModel {
    pub fn new(rest: BodyMesh, weights: SkinningWeights, skeleton: Skeleton) -> Result<Self> {
        // dimension check through a rest-pose skin
        lbs(&rest, &weights, &BoneTransforms::identity(skeleton.len()), &skeleton)?;
        Ok(Self { rest, weights, skeleton })
    }

    pub fn pose(&self, transforms: &BoneTransforms) -> Result<BodyMesh> {
        lbs(&self.rest, &self.weights, transforms, &self.skeleton)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitConfig {
    pub w_3d: f64,
    pub w_2d: f64,
    pub w_prior: f64,
    pub max_iterations: usize,
    /// Smallest decrease of the total cost still counted as progress.
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            w_3d: 100.0,
            w_2d: 0.01,
            w_prior: 1e-3,
            max_iterations: 100,
            tolerance: 1e-12,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_3d", self.w_3d), ("w_2d", self.w_2d), ("w_prior", self.w_prior)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Invalid(alloc::format!("{name} must be a nonnegative number, got {w}")));
            }
        }
        Ok(())
    }
}

/// Keypoint targets. A root-relative 3D target is compared with
/// root-relative joints; 2D targets are frame pixels.
#[derive(Debug, Clone, Copy, Default)]
pub struct FitTargets<'a> {
    pub pose3d: Option<&'a Pose3D>,
    pub pose2d: Option<&'a Pose2D>,
    pub camera: Option<&'a Camera>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub transforms: BoneTransforms,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost after each accepted step.
    pub history: Vec<f64>,
    /// Mean joint distance to the 3D target, meters.
    pub residual_3d: Option<f64>,
    /// Mean reprojection distance over visible 2D targets, pixels.
    pub residual_2d: Option<f64>,
}

/// Fits per-joint local rotations and the root translation so that the
/// skeleton's joints match the targets. Joints are read directly from
/// forward kinematics.
pub fn fit_pose_to_keypoints(
    skeleton: &Skeleton,
    targets: &FitTargets<'_>,
    init: &BoneTransforms,
    cfg: &FitConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    let nj = skeleton.len();
    init.validate(nj)?;
    let use3 = cfg.w_3d > 0.0 && targets.pose3d.is_some();
    let use2 = cfg.w_2d > 0.0 && targets.pose2d.is_some();
    if use3 {
        let t = targets.pose3d.unwrap();
        if t.len() != nj {
            return Err(Error::CountMismatch {
                what: "3D target joints",
                expected: nj,
                got: t.len(),
            });
        }
    }
    let cam = if use2 {
        let t = targets.pose2d.unwrap();
        if t.len() != nj || t.visibility.len() != nj {
            return Err(Error::CountMismatch {
                what: "2D target joints",
                expected: nj,
                got: t.len().min(t.visibility.len()),
            });
        }
        let cam = targets
            .camera
            .ok_or_else(|| Error::Invalid("2D term is active but no camera was given".into()))?;
        cam.validate()?;
        Some(cam)
    } else {
        None
    };
    let np = 3 * nj + 3;
    let sw3 = cfg.w_3d.sqrt();
    let sw2 = cfg.w_2d.sqrt();
    let swp = cfg.w_prior.sqrt();
    let vis: Vec<usize> = if use2 {
        let t = targets.pose2d.unwrap();
        (0..nj).filter(|&k| t.visibility[k]).collect()
    } else {
        Vec::new()
    };
    let n3 = if use3 { 3 * nj } else { 0 };
    let n2 = 2 * vis.len();
    let nprior = if cfg.w_prior > 0.0 { 3 * (nj - 1) } else { 0 };
    let nres = n3 + n2 + nprior;
    let root_relative = use3 && targets.pose3d.unwrap().frame == Frame::RootRelative;

    let residuals = |state: &BoneTransforms, want: bool| -> (DVector<f64>, Option<DMatrix<f64>>) {
        let globals = match global_transforms(skeleton, state) {
            Ok(g) => g,
            Err(_) => return (DVector::repeat(nres.max(1), f64::NAN), None),
        };
        let mut r = DVector::zeros(nres);
        let mut jac = want.then(|| DMatrix::zeros(nres, np));
        // d p_k / d params, 3 × np, for a joint position (world)
        let point_jac = |k: usize, out: &mut DMatrix<f64>, row: usize, scale: f64, proj: &Matrix2x3<f64>, dims: usize| {
            let pk = globals[k].translation;
            let mut j = Some(k);
            while let Some(a) = j {
                let d = -skew(&(pk - globals[a].translation)) * globals[a].rotation;
                let blk = proj.fixed_view::<2, 3>(0, 0) * d;
                for rr in 0..dims {
                    for c in 0..3 {
                        out[(row + rr, 3 * a + c)] = scale * if dims == 3 { d[(rr, c)] } else { blk[(rr, c)] };
                    }
                }
                j = skeleton.parent[a];
            }
            if !(root_relative && dims == 3) {
                for rr in 0..dims {
                    for c in 0..3 {
                        let v = if dims == 3 {
                            if rr == c { 1.0 } else { 0.0 }
                        } else {
                            proj[(rr, c)]
                        };
                        out[(row + rr, 3 * nj + c)] = scale * v;
                    }
                }
            }
        };
        let mut row = 0;
        if use3 {
            let t = targets.pose3d.unwrap();
            let root = globals[0].translation;
            for k in 0..nj {
                let p = if root_relative {
                    globals[k].translation - root
                } else {
                    globals[k].translation
                };
                let e = sw3 * (p - t.positions[k]);
                r.fixed_rows_mut::<3>(row).copy_from(&e);
                if let Some(jm) = jac.as_mut() {
                    point_jac(k, jm, row, sw3, &Matrix2x3::zeros(), 3);
                }
                row += 3;
            }
        }
        if let Some(cam) = cam {
            let t = targets.pose2d.unwrap();
            for &k in &vis {
                let xc = cam.to_camera(&globals[k].translation);
                if xc.z <= 0.0 {
                    r[row] = f64::INFINITY;
                    r[row + 1] = f64::INFINITY;
                    row += 2;
                    continue;
                }
                let px = cam.project_camera_point(&xc);
                r[row] = sw2 * (px.x - t.pixels[k].x);
                r[row + 1] = sw2 * (px.y - t.pixels[k].y);
                if let Some(jm) = jac.as_mut() {
                    let iz = 1.0 / xc.z;
                    let dproj = Matrix2x3::new(
                        cam.f * iz,
                        0.0,
                        -cam.f * xc.x * iz * iz,
                        0.0,
                        cam.f * iz,
                        -cam.f * xc.y * iz * iz,
                    ) * cam.rotation;
                    point_jac(k, jm, row, sw2, &dproj, 2);
                }
                row += 2;
            }
        }
        if nprior > 0 {
            for j in 1..nj {
                let w = log_so3(&state.transforms[j].rotation);
                r.fixed_rows_mut::<3>(row).copy_from(&(swp * w));
                if let Some(jm) = jac.as_mut() {
                    let jr: Mat3 = swp * right_jacobian_inv(&w);
                    jm.view_mut((row, 3 * j), (3, 3)).copy_from(&jr);
                }
                row += 3;
            }
        }
        (r, jac)
    };
    let retract = |state: &BoneTransforms, d: &[f64]| -> Option<BoneTransforms> {
        let mut out = state.clone();
        for j in 0..nj {
            let w = Vec3::new(d[3 * j], d[3 * j + 1], d[3 * j + 2]);
            let r = out.transforms[j].rotation * exp_so3(&w);
            out.transforms[j].rotation = r;
        }
        out.transforms[0].translation += Vec3::new(d[3 * nj], d[3 * nj + 1], d[3 * nj + 2]);
        Some(out)
    };
    if nres == 0 {
        return Ok(FitResult {
            transforms: init.clone(),
            initial_cost: 0.0,
            final_cost: 0.0,
            iterations: 0,
            termination: Termination::Converged,
            history: vec![0.0],
            residual_3d: None,
            residual_2d: None,
        });
    }
    let lm = LmConfig {
        max_iterations: cfg.max_iterations,
        min_improvement: cfg.tolerance,
        max_rejections: 10,
    };
    let out = levenberg_marquardt(init.clone(), np, &lm, residuals, retract)?;
    let mut transforms = out.state;
    for t in &mut transforms.transforms {
        t.rotation = crate::geom::nearest_rotation(&t.rotation);
    }
    let globals = global_transforms(skeleton, &transforms)?;
    let residual_3d = use3.then(|| {
        let t = targets.pose3d.unwrap();
        let root = if root_relative { globals[0].translation } else { Vec3::zeros() };
        globals
            .iter()
            .zip(&t.positions)
            .map(|(g, q)| (g.translation - root - q).norm())
            .sum::<f64>()
            / nj as f64
    });
    let residual_2d = match cam {
        Some(cam) if !vis.is_empty() => {
            let t = targets.pose2d.unwrap();
            let s: f64 = vis
                .iter()
                .map(|&k| (cam.project_camera_point(&cam.to_camera(&globals[k].translation)) - t.pixels[k]).norm())
                .sum();
            Some(s / vis.len() as f64)
        }
        _ => None,
    };
    Ok(FitResult {
        transforms,
        initial_cost: out.initial_cost,
        final_cost: out.final_cost,
        iterations: out.iterations,
        termination: out.termination,
        history: out.history,
        residual_3d,
        residual_2d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{capsule, Part, PartMesh};
    use crate::skeleton::forward_kinematics_world;
    use alloc::string::ToString;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain(n: usize, step: Vec3) -> Skeleton {
        Skeleton::new(
            (0..n).map(|i| alloc::format!("j{i}")).collect(),
            (0..n).map(|i| i.checked_sub(1)).collect(),
            (0..n).map(|i| if i == 0 { Vec3::zeros() } else { step }).collect(),
        )
        .unwrap()
    }

    fn body(mesh: PartMesh) -> BodyMesh {
        BodyMesh::new(vec![mesh])
    }

    #[test]
    fn single_bone_capsule_gets_unit_weights() {
        let sk = chain(2, Vec3::new(0.0, 0.6, 0.0));
        let rest = Pose3D::new(sk.rest_positions(), Frame::World);
        let mesh = body(capsule(Vec3::zeros(), Vec3::new(0.0, 0.6, 0.0), 0.1, 4, 8, 12, Part::Arms));
        let w = heat_diffusion_weights(&mesh, &sk, &rest, &HeatConfig { voxel_res: 24, ..Default::default() }).unwrap();
        for row in &w.rows {
            assert_eq!(row, &vec![(0, 1.0)]);
        }
    }

    /// Shortest 6-connected path length inside the volume between every
    /// cell and the nearest cell of `sources`.
    fn bfs_distance(grid: &VoxelGrid, volume: &[bool], sources: &[usize]) -> Vec<u32> {
        let mut d = vec![u32::MAX; grid.len()];
        let mut q = VecDeque::new();
        for &s in sources {
            d[s] = 0;
            q.push_back(s);
        }
        while let Some(k) = q.pop_front() {
            for n in grid.neighbors(k) {
                if volume[n] && d[n] == u32::MAX {
                    d[n] = d[k] + 1;
                    q.push_back(n);
                }
            }
        }
        d
    }

    #[test]
    fn two_bone_capsule_prefers_nearer_bone() {
        let sk = chain(3, Vec3::new(0.0, 0.5, 0.0));
        let rest = Pose3D::new(sk.rest_positions(), Frame::World);
        let mesh = body(capsule(Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0), 0.12, 4, 16, 12, Part::Legs));
        let res = 32;
        let w = heat_diffusion_weights(&mesh, &sk, &rest, &HeatConfig { voxel_res: res, ..Default::default() }).unwrap();

        // independent voxelization with the same grid rule
        let (verts, faces) = mesh.merged();
        let (mut lo, mut hi) = (verts[0], verts[0]);
        for v in &verts {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let h = (hi - lo).max() / res as f64;
        let mut dims = [0; 3];
        for a in 0..3 {
            dims[a] = (((hi - lo)[a] / h).ceil() as usize).max(1) + 2;
        }
        let grid = VoxelGrid { origin: lo - Vec3::repeat(h), h, dims };
        let volume = voxelize(&grid, &verts, &faces);
        let seg_cells = |a: Vec3, b: Vec3| -> Vec<usize> {
            (0..=200).filter_map(|s| grid.cell(&(a + (b - a) * (s as f64 / 200.0)))).filter(|&k| volume[k]).collect()
        };
        let d0 = bfs_distance(&grid, &volume, &seg_cells(rest.positions[0], rest.positions[1]));
        let d1 = bfs_distance(&grid, &volume, &seg_cells(rest.positions[1], rest.positions[2]));
        let mut checked = 0;
        for (v, p) in verts.iter().enumerate() {
            let k = grid.cell(p).unwrap();
            if !volume[k] {
                continue;
            }
            // skip the ambiguous band around the shared joint
            if d0[k].abs_diff(d1[k]) < 2 {
                continue;
            }
            let (near, far) = if d0[k] < d1[k] { (0, 1) } else { (1, 0) };
            assert!(w.get(v, near) >= w.get(v, far), "vertex {v}: {:?}", w.rows[v]);
            checked += 1;
        }
        assert!(checked > verts.len() / 2);
    }

    #[test]
    fn empty_mesh_and_missing_bone() {
        let sk = chain(2, Vec3::new(0.0, 0.6, 0.0));
        let rest = Pose3D::new(sk.rest_positions(), Frame::World);
        let empty = BodyMesh::new(vec![]);
        assert!(matches!(
            heat_diffusion_weights(&empty, &sk, &rest, &HeatConfig::default()),
            Err(Error::EmptyVoxelization)
        ));
        let far = body(capsule(Vec3::new(5.0, 0.0, 0.0), Vec3::new(5.0, 0.6, 0.0), 0.1, 4, 8, 12, Part::Arms));
        let cfg = HeatConfig { voxel_res: 16, bones: Some(vec![0]), ..Default::default() };
        assert!(matches!(
            heat_diffusion_weights(&far, &sk, &rest, &cfg),
            Err(Error::BoneOutsideVolume(0))
        ));
    }

    #[test]
    fn heat_weights_are_deterministic_and_normalized() {
        let sk = chain(4, Vec3::new(0.0, 0.3, 0.0));
        let rest = Pose3D::new(sk.rest_positions(), Frame::World);
        let mesh = body(capsule(Vec3::zeros(), Vec3::new(0.0, 0.9, 0.0), 0.1, 4, 12, 12, Part::Legs));
        let cfg = HeatConfig { voxel_res: 20, ..Default::default() };
        let a = heat_diffusion_weights(&mesh, &sk, &rest, &cfg).unwrap();
        let b = heat_diffusion_weights(&mesh, &sk, &rest, &cfg).unwrap();
        assert_eq!(a, b);
        for row in &a.rows {
            assert!(row.len() <= MAX_INFLUENCES);
            assert!((row.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|e| e.1 >= 0.0));
        }
    }

    fn two_bone_rig() -> (Skeleton, BodyMesh) {
        let sk = chain(3, Vec3::new(0.0, 0.5, 0.0));
        let mesh = body(capsule(Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0), 0.1, 3, 6, 8, Part::Arms));
        (sk, mesh)
    }

    #[test]
    fn lbs_identity_is_exact() {
        let (sk, mesh) = two_bone_rig();
        let n = mesh.num_vertices();
        let rows = (0..n).map(|v| vec![(0, 0.3 + 0.001 * (v % 7) as f64), (1, 0.7 - 0.001 * (v % 7) as f64)]).collect();
        let w = SkinningWeights::new(3, rows).unwrap();
        let out = lbs(&mesh, &w, &BoneTransforms::identity(3), &sk).unwrap();
        for (a, b) in out.vertices().iter().zip(mesh.vertices()) {
            assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn lbs_rigid_single_bone() {
        let (sk, mesh) = two_bone_rig();
        let n = mesh.num_vertices();
        let w = SkinningWeights::new(3, vec![vec![(0, 1.0)]; n]).unwrap();
        let g = Rigid::new(exp_so3(&Vec3::new(0.3, -0.2, 0.5)), Vec3::new(1.0, 2.0, -0.5));
        let mut t = BoneTransforms::identity(3);
        t.transforms[0] = g;
        let out = lbs(&mesh, &w, &t, &sk).unwrap();
        for (a, b) in out.vertices().iter().zip(mesh.vertices()) {
            assert!((a - g.apply(&b)).norm() < 1e-12);
        }
    }

    #[test]
    fn lbs_blends_translations_linearly() {
        // two independent bones hanging off a root
        let sk = Skeleton::new(
            vec!["r".to_string(), "a".to_string(), "b".to_string()],
            vec![None, Some(0), Some(0)],
            vec![Vec3::zeros(), Vec3::new(0.2, 0.0, 0.0), Vec3::new(-0.2, 0.0, 0.0)],
        )
        .unwrap();
        let (_, mesh) = two_bone_rig();
        let n = mesh.num_vertices();
        let w = SkinningWeights::new(3, vec![vec![(1, 0.5), (2, 0.5)]; n]).unwrap();
        let (t1, t2) = (Vec3::new(0.1, 0.0, 0.3), Vec3::new(-0.4, 0.2, 0.0));
        let mut t = BoneTransforms::identity(3);
        t.transforms[1].translation = t1;
        t.transforms[2].translation = t2;
        let out = lbs(&mesh, &w, &t, &sk).unwrap();
        for (a, b) in out.vertices().iter().zip(mesh.vertices()) {
            assert!((a - b - (t1 + t2) / 2.0).norm() < 1e-12);
        }
    }

    #[test]
    fn lbs_checks_dimensions() {
        let (sk, mesh) = two_bone_rig();
        let w = SkinningWeights::new(3, vec![vec![(0, 1.0)]; 3]).unwrap();
        assert!(matches!(
            lbs(&mesh, &w, &BoneTransforms::identity(3), &sk),
            Err(Error::CountMismatch { .. })
        ));
    }

    fn random_transforms(rng: &mut ChaCha8Rng, n: usize, max_angle: f64) -> BoneTransforms {
        let mut t = BoneTransforms::identity(n);
        for r in &mut t.transforms {
            let w = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            r.rotation = exp_so3(&(w.normalize() * rng.random_range(0.0..max_angle)));
        }
        t
    }

    proptest! {
        #[test]
        fn lbs_commutes_with_global_rigid(seed in 0u64..1000) {
            let (sk, mesh) = two_bone_rig();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = mesh.num_vertices();
            let rows = (0..n).map(|_| {
                let a: f64 = rng.random_range(0.0..1.0);
                vec![(0, a), (1, 1.0 - a)]
            }).collect();
            let w = SkinningWeights::new(3, rows).unwrap();
            let t = random_transforms(&mut rng, 3, 1.0);
            let g = Rigid::new(
                exp_so3(&Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.3)),
                Vec3::new(rng.random_range(-5.0..5.0), 1.0, rng.random_range(-5.0..5.0)),
            );
            let mut moved = t.clone();
            moved.transforms[0] = g.compose(&t.transforms[0]);
            let a = lbs(&mesh, &w, &t, &sk).unwrap();
            let b = lbs(&mesh, &w, &moved, &sk).unwrap();
            for (p, q) in a.vertices().iter().zip(b.vertices()) {
                prop_assert!((g.apply(p) - q).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn fit_at_truth_does_not_move() {
        let sk = chain(6, Vec3::new(0.0, 0.3, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = random_transforms(&mut rng, 6, 0.5);
        let target = forward_kinematics_world(&sk, &truth).unwrap();
        let cfg = FitConfig { w_prior: 0.0, ..Default::default() };
        let targets = FitTargets { pose3d: Some(&target), ..Default::default() };
        let fit = fit_pose_to_keypoints(&sk, &targets, &truth, &cfg).unwrap();
        for (a, b) in fit.transforms.transforms.iter().zip(&truth.transforms) {
            assert!((a.rotation - b.rotation).norm() < 1e-12);
            assert!((a.translation - b.translation).norm() < 1e-12);
        }
    }

    #[test]
    fn fit_recovers_perturbed_chain() {
        let sk = chain(6, Vec3::new(0.05, 0.3, 0.02));
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut truth = random_transforms(&mut rng, 6, 0.6);
            truth.transforms[0].translation = Vec3::new(1.0, 0.5, -2.0);
            let target = forward_kinematics_world(&sk, &truth).unwrap();
            let mut init = truth.clone();
            for t in &mut init.transforms {
                let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                t.rotation *= exp_so3(&(axis.normalize() * 5f64.to_radians()));
            }
            let targets = FitTargets { pose3d: Some(&target), ..Default::default() };
            let fit = fit_pose_to_keypoints(&sk, &targets, &init, &FitConfig::default()).unwrap();
            let got = forward_kinematics_world(&sk, &fit.transforms).unwrap();
            for (a, b) in got.positions.iter().zip(&target.positions) {
                assert!((a - b).norm() < 1e-3, "seed {seed}: {}", (a - b).norm());
            }
            assert!(fit.history.windows(2).all(|w| w[1] <= w[0]));
            assert!(fit.residual_3d.unwrap() < 1e-3);
        }
    }

    #[test]
    fn fit_from_pixels_and_root_relative_joints() {
        // recovering through the 2D term alone exercises the projection chain
        let sk = chain(5, Vec3::new(0.1, 0.3, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut truth = random_transforms(&mut rng, 5, 0.4);
        truth.transforms[0].translation = Vec3::new(0.0, 1.0, 0.0);
        let cam = Camera::look_at(1500.0, 640.0, 360.0, Vec3::new(0.0, 2.0, 6.0), Vec3::new(0.0, 1.5, 0.0)).unwrap();
        let world = forward_kinematics_world(&sk, &truth).unwrap();
        let pixels = world.positions.iter().map(|p| crate::camera::project(&cam, p).unwrap()).collect();
        let target2d = Pose2D::all_visible(pixels);
        let mut init = truth.clone();
        for t in &mut init.transforms {
            t.rotation *= exp_so3(&Vec3::new(0.03, -0.02, 0.04));
        }
        init.transforms[0].translation += Vec3::new(0.02, -0.01, 0.03);
        let rel = world.to_root_relative();
        let targets = FitTargets { pose3d: Some(&rel), pose2d: Some(&target2d), camera: Some(&cam) };
        let cfg = FitConfig { w_3d: 100.0, w_2d: 1.0, w_prior: 0.0, max_iterations: 200, tolerance: 1e-20 };
        let fit = fit_pose_to_keypoints(&sk, &targets, &init, &cfg).unwrap();
        assert!(fit.residual_2d.unwrap() < 1e-4, "{:?}", fit.residual_2d);
        assert!(fit.residual_3d.unwrap() < 1e-6);
    }

    #[test]
    fn pure_3d_fit_needs_no_camera() {
        let sk = chain(3, Vec3::new(0.0, 0.3, 0.0));
        let target = forward_kinematics_world(&sk, &BoneTransforms::identity(3)).unwrap();
        let pix = Pose2D::all_visible(vec![crate::skeleton::Pixel::zeros(); 3]);
        let targets = FitTargets { pose3d: Some(&target), pose2d: Some(&pix), camera: None };
        let cfg = FitConfig { w_2d: 0.0, ..Default::default() };
        assert!(fit_pose_to_keypoints(&sk, &targets, &BoneTransforms::identity(3), &cfg).is_ok());
        let cfg = FitConfig { w_2d: 1.0, ..Default::default() };
        assert!(fit_pose_to_keypoints(&sk, &targets, &BoneTransforms::identity(3), &cfg).is_err());
        let cfg = FitConfig { w_3d: -1.0, ..Default::default() };
        assert!(fit_pose_to_keypoints(&sk, &targets, &BoneTransforms::identity(3), &cfg).is_err());
    }
}
