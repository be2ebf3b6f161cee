//! Small rigid-motion helpers shared across modules.

#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{Matrix3, Rotation3, Vector3, SVD};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Rigid transform `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rigid {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Rigid {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rigid {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Mat3::identity(), t)
    }

    pub fn from_axis_angle(w: Vec3) -> Self {
        Self::new(exp_so3(&w), Vec3::zeros())
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`
    pub fn compose(&self, other: &Rigid) -> Rigid {
        Rigid::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Rigid {
        let rt = self.rotation.transpose();
        Rigid::new(rt, -(rt * self.translation))
    }
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn exp_so3(w: &Vec3) -> Mat3 {
    Rotation3::from_scaled_axis(*w).into_inner()
}

/// Axis-angle vector of a rotation matrix. Tolerates matrices a few ulps off
/// SO(3), where the trace can slightly exceed 3.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let v = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let s = v.norm();
    let c = (r.trace() - 1.0) * 0.5;
    let theta = s.atan2(c);
    if theta < 1e-8 {
        v
    } else if core::f64::consts::PI - theta < 1e-3 {
        // sin θ is tiny: read the axis off the symmetric part (1 − c) a aᵀ
        let b = (r + r.transpose()) * 0.5 - Mat3::identity() * c;
        let i = (0..3).max_by(|&x, &y| b[(x, x)].total_cmp(&b[(y, y)])).unwrap();
        let mut a = b.column(i).into_owned().normalize();
        if a.dot(&v) < 0.0 {
            a = -a;
        }
        a * theta
    } else {
        v * (theta / s)
    }
}

/// Inverse of the right Jacobian of SO(3): maps a right-multiplied increment
/// `R exp(δ)` to the change of `log(R)`.
pub fn right_jacobian_inv(w: &Vec3) -> Mat3 {
    let theta = w.norm();
    let k = skew(w);
    if theta < 1e-6 {
        return Mat3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let coef = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Mat3::identity() + 0.5 * k + coef * k * k
}

/// Largest absolute entry of `RᵀR − I` plus the determinant deviation.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    let e = r.transpose() * r - Mat3::identity();
    e.abs().max() + (r.determinant() - 1.0).abs()
}

/// Nearest rotation in the Frobenius sense.
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = SVD::new(*m, true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut d = Mat3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Rotation whose camera z-axis looks from `eye` towards `target` with the
/// camera y-axis pointing down relative to `up` (image rows grow downward).
/// Returned as a world-to-camera rotation.
pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Option<Mat3> {
    let z = (target - eye).try_normalize(1e-12)?;
    let x = z.cross(up).try_normalize(1e-12)?;
    let y = z.cross(&x);
    Some(Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]))
}
