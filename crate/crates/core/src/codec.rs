//! Heatmap and location-map pose encodings and the pose training loss.
//!
//! Poses live in a 256×256 crop; maps have 64×64 cells, so one cell covers
//! four crop pixels. A joint falls into cell `floor(p / 4)` and decodes back
//! to the cell center `4 c + 2`.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;


use crate::geom::Vec3;
use crate::skeleton::{bone_lengths, Frame, Pixel, Pose2D, Pose3D};
use crate::{Error, Result};

pub const CROP_SIZE: f64 = 256.0;
pub const MAP_RES: usize = 64;
pub const DEFAULT_SIGMA: f64 = 1.0;
/// Jump heights strictly above this count as airborne, meters.
pub const JUMP_THRESHOLD: f64 = 0.1;
/// Probability clamp for the jump cross-entropy.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub joints: usize,
    pub res: usize,
    /// `joints × res × res`, row-major per map (row = y).
    pub values: Vec<f64>,
}

impl HeatmapStack {
    pub fn zeros(joints: usize, res: usize) -> Self {
        Self {
            joints,
            res,
            values: vec![0.0; joints * res * res],
        }
    }

    pub fn map(&self, j: usize) -> &[f64] {
        let n = self.res * self.res;
        &self.values[j * n..(j + 1) * n]
    }

    pub fn map_mut(&mut self, j: usize) -> &mut [f64] {
        let n = self.res * self.res;
        &mut self.values[j * n..(j + 1) * n]
    }

    /// Row-major argmax of one map, `None` when the map has no positive value.
    pub fn argmax(&self, j: usize) -> Option<(usize, usize)> {
        let mut best: Option<(usize, f64)> = None;
        for (k, &v) in self.map(j).iter().enumerate() {
            if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((k, v));
            }
        }
        best.map(|(k, _)| (k % self.res, k / self.res))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationMapStack {
    pub joints: usize,
    pub res: usize,
    /// `joints × 3 × res × res`.
    pub values: Vec<f64>,
}

impl LocationMapStack {
    pub fn zeros(joints: usize, res: usize) -> Self {
        Self {
            joints,
            res,
            values: vec![0.0; joints * 3 * res * res],
        }
    }

    fn offset(&self, j: usize, c: usize) -> usize {
        (j * 3 + c) * self.res * self.res
    }

    pub fn get(&self, j: usize, x: usize, y: usize) -> Vec3 {
        let cell = y * self.res + x;
        Vec3::new(
            self.values[self.offset(j, 0) + cell],
            self.values[self.offset(j, 1) + cell],
            self.values[self.offset(j, 2) + cell],
        )
    }

    fn set(&mut self, j: usize, x: usize, y: usize, v: &Vec3) {
        let cell = y * self.res + x;
        for c in 0..3 {
            let o = self.offset(j, c);
            self.values[o + cell] = v[c];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JumpInfo {
    pub airborne: bool,
    /// Clearance of the lowest joint above the court, meters.
    pub height: f64,
}

impl JumpInfo {
    pub fn from_height(height: f64) -> Self {
        Self {
            airborne: height > JUMP_THRESHOLD,
            height,
        }
    }

    /// Height used for placement: the class gates the regressed height.
    pub fn effective_height(&self) -> f64 {
        if self.airborne {
            self.height
        } else {
            0.0
        }
    }
}

/// Predicted jump state: class probability plus regressed height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEstimate {
    pub airborne_prob: f64,
    pub height: f64,
}

impl From<JumpInfo> for JumpEstimate {
    fn from(j: JumpInfo) -> Self {
        Self {
            airborne_prob: if j.airborne { 1.0 } else { 0.0 },
            height: j.height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PoseLossWeights {
    pub w2d: f64,
    pub w3d: f64,
    pub wbl: f64,
    pub wjht: f64,
    pub wjcls: f64,
}

impl Default for PoseLossWeights {
    fn default() -> Self {
        Self {
            w2d: 10.0,
            w3d: 10.0,
            wbl: 0.5,
            wjht: 0.4,
            wjcls: 0.2,
        }
    }
}

/// Output of [`encode_heatmaps`]: the stack plus the joints whose visible
/// position fell outside the crop and was clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapEncoding {
    pub stack: HeatmapStack,
    pub clamped: Vec<usize>,
}

fn cell_of(p: &Pixel, res: usize) -> ((usize, usize), bool) {
    let scale = res as f64 / CROP_SIZE;
    let max = (res - 1) as f64;
    let cx = (p.x * scale).floor();
    let cy = (p.y * scale).floor();
    let clamped = !(cx >= 0.0 && cx <= max && cy >= 0.0 && cy <= max);
    let cx = if cx.is_nan() { 0.0 } else { cx.clamp(0.0, max) };
    let cy = if cy.is_nan() { 0.0 } else { cy.clamp(0.0, max) };
    ((cx as usize, cy as usize), clamped)
}

fn window(sigma: f64) -> isize {
    (3.0 * sigma).ceil() as isize
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Invalid(alloc::format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Unnormalized Gaussian (peak 1) around each visible joint's cell, truncated
/// to a `±ceil(3σ)` window. Invisible joints produce an all-zero map.
pub fn encode_heatmaps(pose: &Pose2D, sigma: f64) -> Result<HeatmapEncoding> {
    check_sigma(sigma)?;
    let res = MAP_RES;
    let mut stack = HeatmapStack::zeros(pose.len(), res);
    let mut clamped = Vec::new();
    let w = window(sigma);
    for j in 0..pose.len() {
        if !pose.visibility[j] {
            continue;
        }
        let ((cx, cy), was_clamped) = cell_of(&pose.pixels[j], res);
        if was_clamped {
            clamped.push(j);
        }
        let map = stack.map_mut(j);
        for dy in -w..=w {
            for dx in -w..=w {
                let (x, y) = (cx as isize + dx, cy as isize + dy);
                if x < 0 || y < 0 || x >= res as isize || y >= res as isize {
                    continue;
                }
                let d2 = (dx * dx + dy * dy) as f64;
                map[y as usize * res + x as usize] = (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    Ok(HeatmapEncoding { stack, clamped })
}

/// Per-joint argmax mapped back to crop pixels at the cell center.
pub fn decode_heatmaps(maps: &HeatmapStack) -> Pose2D {
    let scale = CROP_SIZE / maps.res as f64;
    let mut pixels = Vec::with_capacity(maps.joints);
    let mut visibility = Vec::with_capacity(maps.joints);
    for j in 0..maps.joints {
        match maps.argmax(j) {
            Some((x, y)) => {
                pixels.push(Pixel::new((x as f64 + 0.5) * scale, (y as f64 + 0.5) * scale));
                visibility.push(true);
            }
            None => {
                pixels.push(Pixel::zeros());
                visibility.push(false);
            }
        }
    }
    Pose2D::new(pixels, visibility)
}

/// Writes each root-relative joint position onto the support of its heatmap.
pub fn encode_location_maps(pose3d: &Pose3D, pose2d: &Pose2D, sigma: f64) -> Result<LocationMapStack> {
    if pose3d.frame != Frame::RootRelative {
        return Err(Error::Invalid("location maps need a root-relative pose".into()));
    }
    if pose3d.len() != pose2d.len() {
        return Err(Error::CountMismatch {
            what: "joints",
            expected: pose2d.len(),
            got: pose3d.len(),
        });
    }
    let heat = encode_heatmaps(pose2d, sigma)?.stack;
    let mut loc = LocationMapStack::zeros(pose3d.len(), heat.res);
    for j in 0..pose3d.len() {
        let map = heat.map(j);
        for (k, &v) in map.iter().enumerate() {
            if v != 0.0 {
                loc.set(j, k % heat.res, k / heat.res, &pose3d.positions[j]);
            }
        }
    }
    Ok(loc)
}

/// Reads each joint's XYZ at its heatmap argmax; joints with empty heatmaps
/// decode to the origin.
pub fn decode_location_maps(loc: &LocationMapStack, heat: &HeatmapStack) -> Result<Pose3D> {
    if loc.joints != heat.joints || loc.res != heat.res {
        return Err(Error::CountMismatch {
            what: "location map joints",
            expected: heat.joints,
            got: loc.joints,
        });
    }
    let positions = (0..heat.joints)
        .map(|j| match heat.argmax(j) {
            Some((x, y)) => loc.get(j, x, y),
            None => Vec3::zeros(),
        })
        .collect();
    Ok(Pose3D::new(positions, Frame::RootRelative))
}

/// Binary cross-entropy of a predicted probability against a 0/1 label.
pub fn binary_cross_entropy(prob: f64, label: bool) -> f64 {
    let p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosePrediction {
    pub heatmaps: HeatmapStack,
    pub locations: LocationMapStack,
    pub jump: JumpEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseTargets {
    pub heatmaps: HeatmapStack,
    pub locations: LocationMapStack,
    pub jump: JumpInfo,
}

/// Unweighted terms and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PoseLoss {
    pub heatmap: f64,
    pub location: f64,
    pub bone_length: f64,
    pub jump_height: f64,
    pub jump_class: f64,
    pub total: f64,
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Weighted sum of mean-L1 heatmap, location-map, bone-length and jump
/// height terms plus the jump-class cross-entropy. Bone lengths of the
/// prediction are measured on its decoded 3D pose.
pub fn pose_loss(
    pred: &PosePrediction,
    gt: &PoseTargets,
    edges: &[(usize, usize)],
    gt_bone_lengths: &[f64],
    weights: &PoseLossWeights,
) -> Result<PoseLoss> {
    if pred.heatmaps.values.len() != gt.heatmaps.values.len()
        || pred.locations.values.len() != gt.locations.values.len()
    {
        return Err(Error::CountMismatch {
            what: "map values",
            expected: gt.heatmaps.values.len(),
            got: pred.heatmaps.values.len(),
        });
    }
    if edges.len() != gt_bone_lengths.len() {
        return Err(Error::CountMismatch {
            what: "bone lengths",
            expected: edges.len(),
            got: gt_bone_lengths.len(),
        });
    }
    let heatmap = mean_abs_diff(&pred.heatmaps.values, &gt.heatmaps.values);
    let location = mean_abs_diff(&pred.locations.values, &gt.locations.values);
    let decoded = decode_location_maps(&pred.locations, &pred.heatmaps)?;
    let lengths = bone_lengths(&decoded, edges)?;
    let bone_length = mean_abs_diff(&lengths, gt_bone_lengths);
    let jump_height = (pred.jump.height - gt.jump.height).abs();
    let jump_class = binary_cross_entropy(pred.jump.airborne_prob, gt.jump.airborne);
    let total = weights.w2d * heatmap
        + weights.w3d * location
        + weights.wbl * bone_length
        + weights.wjht * jump_height
        + weights.wjcls * jump_class;
    Ok(PoseLoss {
        heatmap,
        location,
        bone_length,
        jump_height,
        jump_class,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{Skeleton, NUM_JOINTS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(p: Pixel) -> Pose2D {
        Pose2D::all_visible(vec![p])
    }

    #[test]
    fn center_joint_peaks_at_center_cell() {
        let enc = encode_heatmaps(&single(Pixel::new(128.0, 128.0)), 1.0).unwrap();
        assert_eq!(enc.stack.argmax(0), Some((32, 32)));
        assert!(enc.clamped.is_empty());
    }

    #[test]
    fn gaussian_matches_closed_form() {
        let sigma = 1.0;
        let enc = encode_heatmaps(&single(Pixel::new(130.0, 70.0)), sigma).unwrap();
        assert_eq!(enc.stack.argmax(0), Some((32, 17)));
        let map = enc.stack.map(0);
        for y in 0..MAP_RES {
            for x in 0..MAP_RES {
                let (dx, dy) = (x as f64 - 32.0, y as f64 - 17.0);
                let expected = if dx.abs() <= 3.0 && dy.abs() <= 3.0 {
                    (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
                } else {
                    0.0
                };
                assert!((map[y * MAP_RES + x] - expected).abs() < 1e-15);
            }
        }
        let dec = decode_heatmaps(&enc.stack);
        assert_eq!(dec.pixels[0], Pixel::new(130.0, 70.0));
    }

    #[test]
    fn invisible_and_empty() {
        let pose = Pose2D::new(vec![Pixel::new(10.0, 10.0)], vec![false]);
        let enc = encode_heatmaps(&pose, 1.0).unwrap();
        assert!(enc.stack.values.iter().all(|&v| v == 0.0));
        let dec = decode_heatmaps(&HeatmapStack::zeros(NUM_JOINTS, MAP_RES));
        assert!(dec.visibility.iter().all(|v| !v));
        let loc = decode_location_maps(
            &LocationMapStack::zeros(NUM_JOINTS, MAP_RES),
            &HeatmapStack::zeros(NUM_JOINTS, MAP_RES),
        )
        .unwrap();
        assert!(loc.positions.iter().all(|p| *p == Vec3::zeros()));
    }

    #[test]
    fn out_of_crop_is_clamped_and_flagged() {
        let enc = encode_heatmaps(&single(Pixel::new(300.0, -5.0)), 1.0).unwrap();
        assert_eq!(enc.clamped, vec![0]);
        assert_eq!(enc.stack.argmax(0), Some((63, 0)));
    }

    #[test]
    fn ties_break_row_major() {
        let mut s = HeatmapStack::zeros(1, 4);
        s.values[6] = 1.0;
        s.values[9] = 1.0;
        assert_eq!(s.argmax(0), Some((2, 1)));
    }

    #[test]
    fn location_maps_fill_support() {
        let p3 = Pose3D::new(vec![Vec3::zeros(), Vec3::new(0.1, 0.2, -0.3)], Frame::RootRelative);
        let p2 = Pose2D::all_visible(vec![Pixel::new(100.0, 100.0), Pixel::new(40.0, 200.0)]);
        let heat = encode_heatmaps(&p2, 1.0).unwrap().stack;
        let loc = encode_location_maps(&p3, &p2, 1.0).unwrap();
        for j in 0..2 {
            for (k, &h) in heat.map(j).iter().enumerate() {
                let v = loc.get(j, k % MAP_RES, k / MAP_RES);
                if h != 0.0 {
                    assert_eq!(v, p3.positions[j]);
                } else {
                    assert_eq!(v, Vec3::zeros());
                }
            }
        }
        let world = Pose3D::new(p3.positions.clone(), Frame::World);
        assert!(encode_location_maps(&world, &p2, 1.0).is_err());
    }

    #[test]
    fn jump_threshold_is_strict() {
        let classes: Vec<bool> = [0.05, 0.1, 0.15]
            .iter()
            .map(|&h| JumpInfo::from_height(h).airborne)
            .collect();
        assert_eq!(classes, vec![false, false, true]);
    }

    #[test]
    fn default_weights() {
        let w = PoseLossWeights::default();
        assert_eq!((w.w2d, w.w3d, w.wbl, w.wjht, w.wjcls), (10.0, 10.0, 0.5, 0.4, 0.2));
    }

    fn targets(p3: &Pose3D, p2: &Pose2D, jump: JumpInfo) -> PoseTargets {
        PoseTargets {
            heatmaps: encode_heatmaps(p2, 1.0).unwrap().stack,
            locations: encode_location_maps(p3, p2, 1.0).unwrap(),
            jump,
        }
    }

    #[test]
    fn loss_of_perfect_prediction_is_ce_floor() {
        let skel = Skeleton::canonical();
        let p3 = Pose3D::new(skel.rest_positions(), Frame::RootRelative);
        let p2 = Pose2D::all_visible(
            p3.positions
                .iter()
                .map(|p| Pixel::new(128.0 + 100.0 * p.x, 128.0 - 100.0 * p.y))
                .collect(),
        );
        let edges = skel.edges();
        let bl = bone_lengths(&p3, &edges).unwrap();
        for jump in [JumpInfo::from_height(0.0), JumpInfo::from_height(0.4)] {
            let gt = targets(&p3, &p2, jump);
            let pred = PosePrediction {
                heatmaps: gt.heatmaps.clone(),
                locations: gt.locations.clone(),
                jump: jump.into(),
            };
            let l = pose_loss(&pred, &gt, &edges, &bl, &PoseLossWeights::default()).unwrap();
            assert_eq!(l.heatmap, 0.0);
            assert_eq!(l.location, 0.0);
            assert!(l.bone_length < 1e-15);
            assert_eq!(l.jump_height, 0.0);
            assert!(l.jump_class <= 1e-6);
            assert!(l.total <= 1e-6);
        }
    }

    #[test]
    fn two_joint_toy_matches_manual_sum() {
        // 2 joints, res 64; each map only differs in a few cells
        let mut gt_heat = HeatmapStack::zeros(2, MAP_RES);
        gt_heat.map_mut(0)[0] = 1.0;
        gt_heat.map_mut(1)[65] = 1.0;
        let mut pred_heat = gt_heat.clone();
        pred_heat.map_mut(0)[0] = 0.5; // |diff| 0.5
        pred_heat.map_mut(1)[66] = 0.25; // |diff| 0.25, argmax stays at 65
        let mut gt_loc = LocationMapStack::zeros(2, MAP_RES);
        gt_loc.set(1, 1, 1, &Vec3::new(0.0, 0.4, 0.0));
        let mut pred_loc = gt_loc.clone();
        pred_loc.set(1, 1, 1, &Vec3::new(0.0, 0.5, 0.0)); // |diff| 0.1
        pred_loc.set(0, 0, 0, &Vec3::new(0.0, 0.0, 0.2)); // |diff| 0.2
        let gt = PoseTargets {
            heatmaps: gt_heat,
            locations: gt_loc,
            jump: JumpInfo { airborne: true, height: 0.3 },
        };
        let pred = PosePrediction {
            heatmaps: pred_heat,
            locations: pred_loc,
            jump: JumpEstimate { airborne_prob: 0.8, height: 0.1 },
        };
        let edges = [(0usize, 1usize)];
        let gt_bl = [0.4];
        let l = pose_loss(&pred, &gt, &edges, &gt_bl, &PoseLossWeights::default()).unwrap();
        let n2 = (2 * 64 * 64) as f64;
        let n3 = (2 * 3 * 64 * 64) as f64;
        let heat = (0.5 + 0.25) / n2;
        let loc = (0.1 + 0.2) / n3;
        // decoded pred: joint0 (0,0,0.2), joint1 (0,0.5,0) -> length sqrt(0.29)
        let bl = (0.29f64.sqrt() - 0.4).abs();
        let jht = 0.2;
        let ce = -(0.8f64).ln();
        assert!((l.heatmap - heat).abs() < 1e-15);
        assert!((l.location - loc).abs() < 1e-15);
        assert!((l.bone_length - bl).abs() < 1e-15);
        assert!((l.jump_height - jht).abs() < 1e-15);
        assert!((l.jump_class - ce).abs() < 1e-15);
        let total = 10.0 * heat + 10.0 * loc + 0.5 * bl + 0.4 * jht + 0.2 * ce;
        assert!((l.total - total).abs() < 1e-14);
    }

    #[test]
    fn probability_is_clamped() {
        assert!((binary_cross_entropy(0.0, true) - (-(PROB_EPS).ln())).abs() < 1e-12);
        assert!(binary_cross_entropy(2.0, true).is_finite());
    }

    #[test]
    fn random_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let p2 = Pose2D::all_visible(
                (0..NUM_JOINTS)
                    .map(|_| Pixel::new(rng.random_range(0.0..256.0), rng.random_range(0.0..256.0)))
                    .collect(),
            );
            let p3 = Pose3D::new(
                (0..NUM_JOINTS)
                    .map(|j| {
                        if j == 0 {
                            Vec3::zeros()
                        } else {
                            Vec3::new(
                                rng.random_range(-1.0..1.0),
                                rng.random_range(-1.0..1.0),
                                rng.random_range(-1.0..1.0),
                            )
                        }
                    })
                    .collect(),
                Frame::RootRelative,
            );
            let heat = encode_heatmaps(&p2, 1.0).unwrap().stack;
            let loc = encode_location_maps(&p3, &p2, 1.0).unwrap();
            let d2 = decode_heatmaps(&heat);
            let d3 = decode_location_maps(&loc, &heat).unwrap();
            for j in 0..NUM_JOINTS {
                assert!((d2.pixels[j].x - p2.pixels[j].x).abs() <= 2.0);
                assert!((d2.pixels[j].y - p2.pixels[j].y).abs() <= 2.0);
                assert!((d3.positions[j] - p3.positions[j]).abs().max() <= 1e-9);
            }
        }
    }
}
