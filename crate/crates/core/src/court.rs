//! Planar court model on the `y = 0` plane. The long axis is world x, the
//! short axis world z, both centered at mid-court.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;


use crate::geom::Vec3;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Primitive {
    Segment { a: Vec3, b: Vec3 },
    /// Points `center + radius (cos θ, 0, sin θ)` for θ in `[start, end]`.
    Arc {
        center: Vec3,
        radius: f64,
        start: f64,
        end: f64,
    },
}

impl Primitive {
    pub fn eval(&self, t: f64) -> Vec3 {
        match *self {
            Primitive::Segment { a, b } => a + (b - a) * t,
            Primitive::Arc {
                center,
                radius,
                start,
                end,
            } => {
                let th = start + (end - start) * t;
                center + Vec3::new(radius * th.cos(), 0.0, radius * th.sin())
            }
        }
    }

    pub fn length(&self) -> f64 {
        match *self {
            Primitive::Segment { a, b } => (b - a).norm(),
            Primitive::Arc {
                radius, start, end, ..
            } => radius * (end - start).abs(),
        }
    }

    fn scaled(&self, s: f64) -> Primitive {
        match *self {
            Primitive::Segment { a, b } => Primitive::Segment { a: a * s, b: b * s },
            Primitive::Arc {
                center,
                radius,
                start,
                end,
            } => Primitive::Arc {
                center: center * s,
                radius: radius * s,
                start,
                end,
            },
        }
    }
}

/// Court markings in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CourtDims {
    pub length: f64,
    pub width: f64,
    pub center_circle_radius: f64,
    /// Distance from the baseline to the basket center.
    pub basket_offset: f64,
    pub three_point_radius: f64,
    /// Distance of the corner three-point lines from the sideline.
    pub corner_three_inset: f64,
    pub lane_width: f64,
    /// Distance from the baseline to the free-throw line.
    pub lane_length: f64,
}

impl CourtDims {
    pub const NBA: CourtDims = CourtDims {
        length: 28.65,
        width: 15.24,
        center_circle_radius: 1.83,
        basket_offset: 1.575,
        three_point_radius: 7.24,
        corner_three_inset: 0.91,
        lane_width: 4.88,
        lane_length: 5.79,
    };

    pub const FIBA: CourtDims = CourtDims {
        length: 28.0,
        width: 15.0,
        center_circle_radius: 1.8,
        basket_offset: 1.575,
        three_point_radius: 6.75,
        corner_three_inset: 0.9,
        lane_width: 4.9,
        lane_length: 5.8,
    };

    fn validate(&self) -> Result<()> {
        let all = [
            self.length,
            self.width,
            self.center_circle_radius,
            self.basket_offset,
            self.three_point_radius,
            self.corner_three_inset,
            self.lane_width,
            self.lane_length,
        ];
        if all.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Invalid("court dimensions must be positive".into()));
        }
        if self.corner_three_inset * 2.0 >= self.width || self.lane_width >= self.width {
            return Err(Error::Invalid("court markings exceed the court width".into()));
        }
        if self.width / 2.0 - self.corner_three_inset >= self.three_point_radius {
            return Err(Error::Invalid("three-point arc does not reach the corner lines".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CourtPreset {
    Nba,
    Fiba,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CourtConfig {
    pub dims: CourtDims,
    pub scale: f64,
}

impl Default for CourtConfig {
    fn default() -> Self {
        Self::preset(CourtPreset::Nba)
    }
}

impl CourtConfig {
    pub fn preset(p: CourtPreset) -> Self {
        let dims = match p {
            CourtPreset::Nba => CourtDims::NBA,
            CourtPreset::Fiba => CourtDims::FIBA,
        };
        Self { dims, scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CourtModel {
    pub primitives: Vec<Primitive>,
    pub length: f64,
    pub width: f64,
    /// Line intersections and corners usable as manual correspondences.
    pub keypoints: Vec<Vec3>,
}

pub fn make_court_model(config: &CourtConfig) -> Result<CourtModel> {
    let d = config.dims;
    d.validate()?;
    if !(config.scale > 0.0 && config.scale.is_finite()) {
        return Err(Error::Invalid("court scale must be positive".into()));
    }
    let (hl, hw) = (d.length / 2.0, d.width / 2.0);
    let p = |x: f64, z: f64| Vec3::new(x, 0.0, z);
    let seg = |a: Vec3, b: Vec3| Primitive::Segment { a, b };
    let mut prims = Vec::new();
    let mut kps = Vec::new();

    let corners = [p(-hl, -hw), p(hl, -hw), p(hl, hw), p(-hl, hw)];
    for k in 0..4 {
        prims.push(seg(corners[k], corners[(k + 1) % 4]));
    }
    kps.extend_from_slice(&corners);
    prims.push(seg(p(0.0, -hw), p(0.0, hw)));
    kps.extend_from_slice(&[p(0.0, -hw), p(0.0, hw)]);
    prims.push(Primitive::Arc {
        center: Vec3::zeros(),
        radius: d.center_circle_radius,
        start: 0.0,
        end: 2.0 * core::f64::consts::PI,
    });
    kps.extend_from_slice(&[p(0.0, -d.center_circle_radius), p(0.0, d.center_circle_radius)]);

    for side in [-1.0, 1.0] {
        let baseline = side * hl;
        let basket = side * (hl - d.basket_offset);
        let corner_z = hw - d.corner_three_inset;
        let reach = (d.three_point_radius * d.three_point_radius - corner_z * corner_z).sqrt();
        let corner_end = basket - side * reach;
        for zs in [-1.0, 1.0] {
            prims.push(seg(p(baseline, zs * corner_z), p(corner_end, zs * corner_z)));
            kps.push(p(baseline, zs * corner_z));
            kps.push(p(corner_end, zs * corner_z));
        }
        let phi = (corner_z / d.three_point_radius).asin();
        // arc bulges towards mid-court
        let mid = if side > 0.0 { core::f64::consts::PI } else { 0.0 };
        prims.push(Primitive::Arc {
            center: p(basket, 0.0),
            radius: d.three_point_radius,
            start: mid - phi,
            end: mid + phi,
        });
        kps.push(p(basket - side * d.three_point_radius, 0.0));

        let ft = baseline - side * d.lane_length;
        let lw = d.lane_width / 2.0;
        let lane = [p(baseline, -lw), p(ft, -lw), p(ft, lw), p(baseline, lw)];
        for k in 0..3 {
            prims.push(seg(lane[k], lane[k + 1]));
        }
        kps.extend_from_slice(&lane);
    }

    let s = config.scale;
    Ok(CourtModel {
        primitives: prims.iter().map(|q| q.scaled(s)).collect(),
        length: d.length * s,
        width: d.width * s,
        keypoints: kps.iter().map(|k| k * s).collect(),
    })
}

impl CourtModel {
    /// Points along every primitive with roughly `spacing` meters between them.
    pub fn sample(&self, spacing: f64) -> Vec<Vec3> {
        let mut out = Vec::new();
        for prim in &self.primitives {
            let n = (prim.length() / spacing).ceil().max(1.0) as usize;
            for k in 0..=n {
                out.push(prim.eval(k as f64 / n as f64));
            }
        }
        out
    }
}
