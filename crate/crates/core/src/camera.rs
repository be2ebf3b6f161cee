//! Pinhole broadcast camera: projection, planar PnP from court
//! correspondences, court-line rasterization and line-based refinement.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};

use crate::court::{CourtModel, Primitive};
use crate::geom::{exp_so3, nearest_rotation, orthonormality_error, skew, Mat3, Vec3};
use crate::skeleton::Pixel;
use crate::optim::{levenberg_marquardt, LmConfig, Termination};
use crate::{Error, Result};

/// World-to-camera pinhole camera: `X_c = R X_w + T`, `x = f X_c / Z_c + p`.
/// Camera axes: x right, y down, z forward.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Camera {
    pub f: f64,
    pub px: f64,
    pub py: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Camera {
    pub fn new(f: f64, px: f64, py: f64, rotation: Mat3, translation: Vec3) -> Result<Self> {
        let cam = Self {
            f,
            px,
            py,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target` with world +y up.
    pub fn look_at(f: f64, px: f64, py: f64, eye: Vec3, target: Vec3) -> Result<Self> {
        let r = crate::geom::look_at(&eye, &target, &Vec3::y())
            .ok_or_else(|| Error::Degenerate("look-at direction parallel to up".into()))?;
        Self::new(f, px, py, r, -(r * eye))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f > 0.0 && self.f.is_finite()) {
            return Err(Error::Invalid(alloc::format!("focal length must be positive, got {}", self.f)));
        }
        let dev = orthonormality_error(&self.rotation);
        if !(dev <= 1e-9) {
            return Err(Error::NotOrthonormal {
                joint: 0,
                deviation: dev,
            });
        }
        if !(self.px.is_finite() && self.py.is_finite() && self.translation.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("camera"));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn to_camera(&self, world: &Vec3) -> Vec3 {
        self.rotation * world + self.translation
    }

    /// Projection of a camera-space point, no depth check.
    #[inline]
    pub fn project_camera_point(&self, xc: &Vec3) -> Pixel {
        Pixel::new(self.f * xc.x / xc.z + self.px, self.f * xc.y / xc.z + self.py)
    }

    /// Bearing `((x − p_x)/f, (y − p_y)/f, 1)` of a pixel in camera space.
    pub fn ray(&self, pixel: &Pixel) -> Vec3 {
        Vec3::new((pixel.x - self.px) / self.f, (pixel.y - self.py) / self.f, 1.0)
    }

    /// Applies a `(ω, T, f)` increment; `None` if the focal length would
    /// become non-positive.
    fn retract(&self, delta: &[f64]) -> Option<Camera> {
        let cam = self.perturbed(delta);
        (cam.f > 0.0).then_some(cam)
    }

    fn perturbed(&self, delta: &[f64]) -> Camera {
        let w = Vec3::new(delta[0], delta[1], delta[2]);
        let rotation = exp_so3(&w) * self.rotation;
        Camera {
            f: if delta.len() > 6 { self.f + delta[6] } else { self.f },
            px: self.px,
            py: self.py,
            rotation,
            // rotate about the camera center so translation stays decoupled
            translation: exp_so3(&w) * self.translation + Vec3::new(delta[3], delta[4], delta[5]),
        }
    }
}

pub fn project(camera: &Camera, world: &Vec3) -> Result<Pixel> {
    let xc = camera.to_camera(world);
    if !(xc.z > 0.0) {
        return Err(Error::BehindCamera { z: xc.z });
    }
    Ok(camera.project_camera_point(&xc))
}

/// 2×7 Jacobian of the projection w.r.t. `(ω, T, f)` where `ω` left-multiplies
/// the rotation and also rotates `T` (see [`Camera::perturbed`]).
fn projection_jacobian(camera: &Camera, xc: &Vec3) -> [[f64; 7]; 2] {
    let (x, y, z) = (xc.x, xc.y, xc.z);
    let f = camera.f;
    let du = [f / z, 0.0, -f * x / (z * z)];
    let dv = [0.0, f / z, -f * y / (z * z)];
    // d xc / d ω = −[xc]×, d xc / d T = I
    let dw = -skew(xc);
    let mut j = [[0.0; 7]; 2];
    for (row, d) in [du, dv].iter().enumerate() {
        for k in 0..3 {
            j[row][k] = d[0] * dw[(0, k)] + d[1] * dw[(1, k)] + d[2] * dw[(2, k)];
            j[row][3 + k] = d[k];
        }
    }
    j[0][6] = x / z;
    j[1][6] = y / z;
    j
}

/// Binary image of court-line pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl LineMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize) {
        self.data[y * self.width + x] = true;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    fn stamp(&mut self, p: &Pixel) {
        if p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64 {
            self.set(p.x as usize, p.y as usize);
        }
    }
}

const NEAR_Z: f64 = 1e-3;
const MAX_DEPTH: u32 = 40;
const MAX_ARC_STEP: f64 = 5.0 * core::f64::consts::PI / 180.0;

struct Rasterizer<'a> {
    camera: &'a Camera,
    mask: LineMask,
}

impl Rasterizer<'_> {
    fn outside_same_side(&self, a: &Pixel, b: &Pixel) -> bool {
        let m = 2.0;
        let (w, h) = (self.mask.width as f64, self.mask.height as f64);
        (a.x < -m && b.x < -m) || (a.y < -m && b.y < -m) || (a.x > w + m && b.x > w + m) || (a.y > h + m && b.y > h + m)
    }

    fn draw(&mut self, prim: &Primitive, t0: f64, t1: f64, depth: u32) {
        let (a, b) = (prim.eval(t0), prim.eval(t1));
        let (ca, cb) = (self.camera.to_camera(&a), self.camera.to_camera(&b));
        let (fa, fb) = (ca.z > NEAR_Z, cb.z > NEAR_Z);
        if !fa && !fb {
            return;
        }
        if fa && fb {
            let (pa, pb) = (self.camera.project_camera_point(&ca), self.camera.project_camera_point(&cb));
            if self.outside_same_side(&pa, &pb) {
                return;
            }
            if (pa - pb).norm() <= 0.5 || depth >= MAX_DEPTH {
                self.mask.stamp(&pa);
                self.mask.stamp(&pb);
                return;
            }
        } else if depth >= MAX_DEPTH {
            return;
        }
        let tm = 0.5 * (t0 + t1);
        self.draw(prim, t0, tm, depth + 1);
        self.draw(prim, tm, t1, depth + 1);
    }
}

/// Projects every court primitive with ≤ 0.5 px sample spacing and stamps the
/// containing pixels. Samples behind the camera are dropped.
pub fn rasterize_court_lines(camera: &Camera, court: &CourtModel, width: usize, height: usize) -> LineMask {
    let mut r = Rasterizer {
        camera,
        mask: LineMask::empty(width, height),
    };
    for prim in &court.primitives {
        let pieces = match prim {
            Primitive::Segment { .. } => 1,
            Primitive::Arc { start, end, .. } => ((end - start).abs() / MAX_ARC_STEP).ceil().max(1.0) as usize,
        };
        for k in 0..pieces {
            r.draw(prim, k as f64 / pieces as f64, (k + 1) as f64 / pieces as f64, 0);
        }
    }
    r.mask
}

/// Exact squared Euclidean distance transform of a 1D sampled function.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q] == f64::INFINITY {
            continue;
        }
        if f[v[0]] == f64::INFINITY {
            v[0] = q;
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                v[0] = q;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    if f[v[0]] == f64::INFINITY {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Euclidean distance (pixels) from every pixel center to the nearest mask
/// pixel center.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DistanceField {
    pub fn from_mask(mask: &LineMask) -> Result<Self> {
        if mask.count() == 0 {
            return Err(Error::EmptyMask);
        }
        let (w, h) = (mask.width, mask.height);
        let n = w.max(h);
        let mut grid: Vec<f64> = mask.data.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
        let (mut f, mut out) = (vec![0.0; n], vec![0.0; n]);
        let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
        for x in 0..w {
            for y in 0..h {
                f[y] = grid[y * w + x];
            }
            edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
            for y in 0..h {
                grid[y * w + x] = out[y];
            }
        }
        for y in 0..h {
            f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
            edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
            grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
        }
        Ok(Self {
            width: w,
            height: h,
            values: grid.into_iter().map(|d| d.sqrt()).collect(),
        })
    }

    /// Bilinear sample at a continuous pixel position (pixel centers at
    /// `i + 0.5`), clamped to the image, with its gradient.
    pub fn sample(&self, p: &Pixel) -> (f64, [f64; 2]) {
        let (w, h) = (self.width as f64, self.height as f64);
        let u = (p.x - 0.5).clamp(0.0, w - 1.0);
        let v = (p.y - 0.5).clamp(0.0, h - 1.0);
        let inside_x = p.x - 0.5 > 0.0 && p.x - 0.5 < w - 1.0;
        let inside_y = p.y - 0.5 > 0.0 && p.y - 0.5 < h - 1.0;
        let x0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let (tx, ty) = (u - x0 as f64, v - y0 as f64);
        let at = |x: usize, y: usize| self.values[y * self.width + x];
        let (a, b, c, d) = (at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1));
        let val = a * (1.0 - tx) * (1.0 - ty) + b * tx * (1.0 - ty) + c * (1.0 - tx) * ty + d * tx * ty;
        let gx = if inside_x { (b - a) * (1.0 - ty) + (d - c) * ty } else { 0.0 };
        let gy = if inside_y { (c - a) * (1.0 - tx) + (d - b) * tx } else { 0.0 };
        (val, [gx, gy])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RefineConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step improves the cost by less than this.
    pub min_improvement: f64,
    /// World spacing of court samples, meters.
    pub sample_spacing: f64,
    pub max_rejections: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            min_improvement: 1e-8,
            sample_spacing: 0.05,
            max_rejections: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub camera: Camera,
    /// Mean squared distance-transform value at the projected samples, px².
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub samples_used: usize,
}

/// Refines rotation, translation and focal length so that projected court
/// samples fall on the mask's lines (minimizing the mean squared distance
/// transform at the projected samples).
pub fn refine_camera_lines(init: &Camera, mask: &LineMask, court: &CourtModel, cfg: &RefineConfig) -> Result<Refinement> {
    init.validate()?;
    let field = DistanceField::from_mask(mask)?;
    let (w, h) = (mask.width as f64, mask.height as f64);
    let samples: Vec<Vec3> = court
        .sample(cfg.sample_spacing)
        .into_iter()
        .filter(|p| {
            let xc = init.to_camera(p);
            if xc.z <= NEAR_Z {
                return false;
            }
            let px = init.project_camera_point(&xc);
            px.x >= 2.0 && px.y >= 2.0 && px.x < w - 2.0 && px.y < h - 2.0
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::Degenerate("no court samples project into the frame".into()));
    }
    let n = samples.len();
    let lm = LmConfig {
        max_iterations: cfg.max_iterations,
        // the tolerance applies to the mean, the solver works on the sum
        min_improvement: cfg.min_improvement * n as f64,
        max_rejections: cfg.max_rejections,
    };
    let out = levenberg_marquardt(
        *init,
        7,
        &lm,
        |cam: &Camera, want_j| {
            let mut r = DVector::zeros(n);
            let mut jac = if want_j { Some(DMatrix::zeros(n, 7)) } else { None };
            for (i, p) in samples.iter().enumerate() {
                let xc = cam.to_camera(p);
                if xc.z <= NEAR_Z {
                    r[i] = f64::INFINITY;
                    continue;
                }
                let px = cam.project_camera_point(&xc);
                let (d, g) = field.sample(&px);
                r[i] = d;
                if let Some(jm) = jac.as_mut() {
                    let pj = projection_jacobian(cam, &xc);
                    for k in 0..7 {
                        jm[(i, k)] = g[0] * pj[0][k] + g[1] * pj[1][k];
                    }
                }
            }
            (r, jac)
        },
        |cam, d| cam.retract(d),
    )?;
    let mut camera = out.state;
    camera.rotation = nearest_rotation(&camera.rotation);
    let (initial_cost, final_cost) = (out.initial_cost / n as f64, out.final_cost / n as f64);
    let (iterations, termination) = (out.iterations, out.termination);
    Ok(Refinement {
        camera,
        initial_cost,
        final_cost,
        iterations,
        termination,
        samples_used: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PnpOptions {
    /// Known focal length; required when the view is fronto-parallel to the
    /// court, where the homography does not constrain the focal length.
    pub focal: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PnpSolution {
    pub camera: Camera,
    /// Per-correspondence reprojection error, pixels.
    pub residuals: Vec<f64>,
    pub mean_residual: f64,
}

fn normalizing_transform(points: &[[f64; 2]]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for p in points {
        cx += p[0] / n;
        cy += p[1] / n;
    }
    let mean_dist = points.iter().map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()).sum::<f64>() / n;
    if !(mean_dist > 1e-12) {
        return Err(Error::Degenerate("coincident points".into()));
    }
    let s = core::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn apply_h(h: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = h * Vec3::new(p[0], p[1], 1.0);
    [v.x / v.z, v.y / v.z]
}

fn check_not_collinear(points: &[[f64; 2]]) -> Result<()> {
    let n = points.len();
    let scale = points
        .iter()
        .flat_map(|a| points.iter().map(move |b| (a[0] - b[0]).hypot(a[1] - b[1])))
        .fold(0.0, f64::max);
    if !(scale > 1e-9) {
        return Err(Error::Degenerate("coincident points".into()));
    }
    let area = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs() / (scale * scale)
    };
    let tol = 1e-6;
    if n == 4 {
        for skip in 0..4 {
            let tri: Vec<[f64; 2]> = (0..4).filter(|&k| k != skip).map(|k| points[k]).collect();
            if area(tri[0], tri[1], tri[2]) < tol {
                return Err(Error::Degenerate("three of the four court points are collinear".into()));
            }
        }
    } else {
        let max_area = (0..n)
            .flat_map(|i| (i + 1..n).flat_map(move |j| (j + 1..n).map(move |k| (i, j, k))))
            .map(|(i, j, k)| area(points[i], points[j], points[k]))
            .fold(0.0, f64::max);
        if max_area < tol {
            return Err(Error::Degenerate("court points are collinear".into()));
        }
    }
    Ok(())
}

/// Court-plane to image homography by normalized DLT; maps `(x, z, 1)` to
/// pixel offsets from `(cx, cy)`.
fn planar_homography(court: &[[f64; 2]], image: &[[f64; 2]]) -> Result<Matrix3<f64>> {
    let tc = normalizing_transform(court)?;
    let ti = normalizing_transform(image)?;
    let n = court.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 9);
    for k in 0..n {
        let [x, y] = apply_h(&tc, court[k]);
        let [u, v] = apply_h(&ti, image[k]);
        let rows = [
            [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u],
            [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v],
        ];
        for (r, row) in rows.iter().enumerate() {
            for c in 0..9 {
                a[(2 * k + r, c)] = row[c];
            }
        }
    }
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let max = eig.eigenvalues[order[8]].abs().max(1e-300);
    if eig.eigenvalues[order[1]].abs() < 1e-12 * max {
        return Err(Error::Degenerate("homography system is rank deficient".into()));
    }
    let hv = eig.eigenvectors.column(order[0]);
    let hn = Matrix3::new(hv[0], hv[1], hv[2], hv[3], hv[4], hv[5], hv[6], hv[7], hv[8]);
    let ti_inv = ti.try_inverse().ok_or_else(|| Error::Degenerate("normalization".into()))?;
    let h = ti_inv * hn * tc;
    Ok(h / h.norm())
}

/// Camera from ≥ 4 pixel ↔ court-point correspondences (court points on
/// `y = 0`). The principal point is the image center; the focal length comes
/// from the orthogonality and equal-norm constraints on the homography
/// columns unless supplied in `opts`. A short Gauss-Newton pass polishes
/// the linear estimate on the reprojection error.
pub fn solve_pnp_planar(
    correspondences: &[(Pixel, Vec3)],
    width: usize,
    height: usize,
    opts: &PnpOptions,
) -> Result<PnpSolution> {
    if correspondences.len() < 4 {
        return Err(Error::CountMismatch {
            what: "correspondences (at least)",
            expected: 4,
            got: correspondences.len(),
        });
    }
    if correspondences.iter().any(|(_, p)| p.y.abs() > 1e-9) {
        return Err(Error::Invalid("court points must lie on y = 0".into()));
    }
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let court: Vec<[f64; 2]> = correspondences.iter().map(|(_, p)| [p.x, p.z]).collect();
    let image: Vec<[f64; 2]> = correspondences.iter().map(|(q, _)| [q.x - cx, q.y - cy]).collect();
    check_not_collinear(&court)?;
    check_not_collinear(&image)?;
    let h = planar_homography(&court, &image)?;

    let f = match opts.focal {
        Some(f) if f > 0.0 => f,
        Some(f) => return Err(Error::Invalid(alloc::format!("focal length must be positive, got {f}"))),
        None => {
            let (h1, h2) = (h.column(0), h.column(1));
            let a1 = h1[0] * h2[0] + h1[1] * h2[1];
            let b1 = h1[2] * h2[2];
            let a2 = h1[0] * h1[0] + h1[1] * h1[1] - h2[0] * h2[0] - h2[1] * h2[1];
            let b2 = h1[2] * h1[2] - h2[2] * h2[2];
            let denom = a1 * a1 + a2 * a2;
            let inv_f2 = -(a1 * b1 + a2 * b2) / denom;
            // the perspective row must carry signal, otherwise f is unobservable
            let signal = (b1.abs() + b2.abs()) / (a1.abs() + a2.abs()).max(1e-300);
            if !(inv_f2 > 0.0) || !inv_f2.is_finite() || signal < 1e-14 {
                return Err(Error::Degenerate("focal length solution is non-positive".into()));
            }
            1.0 / inv_f2.sqrt()
        }
    };

    let kinv = Matrix3::new(1.0 / f, 0.0, 0.0, 0.0, 1.0 / f, 0.0, 0.0, 0.0, 1.0);
    let m = kinv * h;
    let (m1, m2, m3) = (m.column(0).into_owned(), m.column(1).into_owned(), m.column(2).into_owned());
    let mut lambda = 2.0 / (m1.norm() + m2.norm());
    if m3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let rx = m1 * lambda;
    let rz = m2 * lambda;
    let ry = rz.cross(&rx);
    let rotation = nearest_rotation(&Mat3::from_columns(&[rx, ry, rz]));
    let translation = m3 * lambda;
    let linear = Camera {
        f,
        px: cx,
        py: cy,
        rotation,
        translation,
    };

    let nparams = if opts.focal.is_some() { 6 } else { 7 };
    let pts: Vec<(Pixel, Vec3)> = correspondences.to_vec();
    let lm = LmConfig {
        max_iterations: 50,
        min_improvement: 1e-18,
        max_rejections: 10,
    };
    let polished = levenberg_marquardt(
        linear,
        nparams,
        &lm,
        |cam: &Camera, want_j| {
            let mut r = DVector::zeros(2 * pts.len());
            let mut jac = if want_j { Some(DMatrix::zeros(2 * pts.len(), nparams)) } else { None };
            for (i, (q, p)) in pts.iter().enumerate() {
                let xc = cam.to_camera(p);
                let proj = cam.project_camera_point(&xc);
                r[2 * i] = proj.x - q.x;
                r[2 * i + 1] = proj.y - q.y;
                if let Some(jm) = jac.as_mut() {
                    let pj = projection_jacobian(cam, &xc);
                    for k in 0..nparams {
                        jm[(2 * i, k)] = pj[0][k];
                        jm[(2 * i + 1, k)] = pj[1][k];
                    }
                }
            }
            (r, jac)
        },
        |cam, d| cam.retract(d),
    )?;
    let mut camera = polished.state;
    camera.rotation = nearest_rotation(&camera.rotation);
    if !(camera.f > 0.0) {
        return Err(Error::Degenerate("focal length solution is non-positive".into()));
    }
    let residuals: Vec<f64> = correspondences
        .iter()
        .map(|(q, p)| project(&camera, p).map(|pp| (pp - q).norm()))
        .collect::<Result<_>>()?;
    let mean_residual = residuals.iter().sum::<f64>() / residuals.len() as f64;
    Ok(PnpSolution {
        camera,
        residuals,
        mean_residual,
    })
}

/// Mean pixel distance between the projections of `points` under two
/// cameras, over points that project in front of both and inside the frame
/// of `reference`. Returns `None` when no point qualifies.
pub fn mean_reprojection_difference(
    reference: &Camera,
    other: &Camera,
    points: &[Vec3],
    width: usize,
    height: usize,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in points {
        let (Ok(a), Ok(b)) = (project(reference, p), project(other, p)) else {
            continue;
        };
        if a.x < 0.0 || a.y < 0.0 || a.x >= width as f64 || a.y >= height as f64 {
            continue;
        }
        sum += (a - b).norm();
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}
