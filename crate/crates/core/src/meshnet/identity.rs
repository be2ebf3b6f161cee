#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::Tensor;
use crate::geom::Vec3;
use crate::mesh::BodyMesh;
use crate::{Error, Result};

/// Per-vertex map `[v; feature] → tanh hidden layer → offset`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IdentityParams {
    /// `hidden × (3 + feature_dim)`
    pub w1: Tensor,
    pub b1: Tensor,
    /// `3 × hidden`
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityGrad {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl IdentityParams {
    pub fn zeros(hidden: usize, feature_dim: usize) -> Self {
        Self {
            w1: Tensor::zeros(vec![hidden, 3 + feature_dim]),
            b1: Tensor::zeros(vec![hidden]),
            w2: Tensor::zeros(vec![3, hidden]),
            b2: Tensor::zeros(vec![3]),
        }
    }

    pub fn random(hidden: usize, feature_dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(hidden, feature_dim);
        for t in [&mut p.w1, &mut p.b1, &mut p.w2, &mut p.b2] {
            t.data.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.w1.shape.get(1).map_or(0, |c| c.saturating_sub(3))
    }

    fn check(&self, feature: &[f64]) -> Result<()> {
        let h = self.hidden();
        let ok = self.w1.shape == [h, 3 + feature.len()] && self.w2.shape == [3, h] && self.b2.len() == 3;
        if !ok {
            return Err(Error::CountMismatch {
                what: "identity feature",
                expected: self.feature_dim(),
                got: feature.len(),
            });
        }
        Ok(())
    }

    fn hidden_pre(&self, v: &Vec3, feature: &[f64]) -> Vec<f64> {
        let nin = 3 + feature.len();
        (0..self.hidden())
            .map(|k| {
                let row = &self.w1.data[k * nin..(k + 1) * nin];
                self.b1.data[k]
                    + row[0] * v.x
                    + row[1] * v.y
                    + row[2] * v.z
                    + row[3..].iter().zip(feature).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    fn offset(&self, act: &[f64]) -> Vec3 {
        let h = self.hidden();
        Vec3::from_fn(|r, _| self.b2.data[r] + self.w2.data[r * h..(r + 1) * h].iter().zip(act).map(|(a, b)| a * b).sum::<f64>())
    }
}

/// Template plus predicted per-vertex offsets.
pub fn identity_offsets(template: &BodyMesh, feature: &[f64], params: &IdentityParams) -> Result<BodyMesh> {
    params.check(feature)?;
    let out: Vec<Vec3> = template
        .vertices()
        .iter()
        .map(|v| {
            let act: Vec<f64> = params.hidden_pre(v, feature).iter().map(|x| x.tanh()).collect();
            v + params.offset(&act)
        })
        .collect();
    template.with_vertices(&out)
}

/// Mean absolute coordinate error of the offset template against `target`
/// and its gradient w.r.t. the parameters.
pub fn identity_loss(template: &BodyMesh, feature: &[f64], params: &IdentityParams, target: &BodyMesh) -> Result<(f64, IdentityGrad)> {
    params.check(feature)?;
    if target.num_vertices() != template.num_vertices() {
        return Err(Error::CountMismatch {
            what: "identity target vertices",
            expected: template.num_vertices(),
            got: target.num_vertices(),
        });
    }
    let h = params.hidden();
    let nin = 3 + feature.len();
    let mut g = IdentityGrad {
        w1: Tensor::zeros(params.w1.shape.clone()),
        b1: Tensor::zeros(vec![h]),
        w2: Tensor::zeros(vec![3, h]),
        b2: Tensor::zeros(vec![3]),
    };
    let verts = template.vertices();
    let targets = target.vertices();
    let n = (3 * verts.len()).max(1) as f64;
    let mut loss = 0.0;
    for (v, t) in verts.iter().zip(&targets) {
        let act: Vec<f64> = params.hidden_pre(v, feature).iter().map(|x| x.tanh()).collect();
        let d = v + params.offset(&act) - t;
        loss += d.abs().sum();
        let gout = d.map(|x| {
            if x > 0.0 {
                1.0 / n
            } else if x < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        });
        let mut gact = vec![0.0; h];
        for r in 0..3 {
            g.b2.data[r] += gout[r];
            for k in 0..h {
                g.w2.data[r * h + k] += gout[r] * act[k];
                gact[k] += gout[r] * params.w2.data[r * h + k];
            }
        }
        for k in 0..h {
            let gpre = gact[k] * (1.0 - act[k] * act[k]);
            g.b1.data[k] += gpre;
            let row = &mut g.w1.data[k * nin..(k + 1) * nin];
            row[0] += gpre * v.x;
            row[1] += gpre * v.y;
            row[2] += gpre * v.z;
            for (r, f) in row[3..].iter_mut().zip(feature) {
                *r += gpre * f;
            }
        }
    }
    Ok((loss / n, g))
}
