//! Evaluation metrics: Procrustes alignment, ICP, joint and vertex errors,
//! Chamfer distance and earth mover's distance.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use crate::geom::{Mat3, Rigid, Vec3};
use crate::skeleton::Pose3D;
use crate::{Error, Result};

/// Similarity transform `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Similarity {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    pub fn rigid(&self) -> Rigid {
        Rigid::new(self.rotation, self.translation)
    }
}

#[derive(Debug, Clone)]
pub struct Alignment {
    pub transform: Similarity,
    pub aligned: Vec<Vec3>,
    /// Sum of squared distances after alignment.
    pub residual: f64,
    /// Covariance was rank deficient (or the source had no spread), so the
    /// rotation is not unique.
    pub degenerate: bool,
}

fn centroid(x: &[Vec3]) -> Vec3 {
    x.iter().fold(Vec3::zeros(), |a, p| a + p) / x.len() as f64
}

pub fn sum_squared(x: &[Vec3], y: &[Vec3]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).norm_squared()).sum()
}

/// Closed-form least-squares alignment of `x` onto `y` (corresponding rows).
pub fn procrustes_align(x: &[Vec3], y: &[Vec3], with_scale: bool) -> Result<Alignment> {
    if x.len() != y.len() {
        return Err(Error::CountMismatch {
            what: "corresponding points",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::Degenerate(alloc::format!("need at least 3 points, got {}", x.len())));
    }
    let mx = centroid(x);
    let my = centroid(y);
    let mut cov = Mat3::zeros();
    let mut var_x = 0.0;
    for (a, b) in x.iter().zip(y) {
        let da = a - mx;
        cov += (b - my) * da.transpose();
        var_x += da.norm_squared();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > 1e-12 * smax.max(1e-300)).count();
    let degenerate = rank < 2 || var_x <= 0.0;
    let mut d = Mat3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * vt;
    let scale = if with_scale && var_x > 0.0 {
        (sv[0] * d[(0, 0)] + sv[1] * d[(1, 1)] + sv[2] * d[(2, 2)]) / var_x
    } else {
        1.0
    };
    let translation = my - rotation * mx * scale;
    let transform = Similarity {
        scale,
        rotation,
        translation,
    };
    let aligned: Vec<Vec3> = x.iter().map(|p| transform.apply(p)).collect();
    let residual = sum_squared(&aligned, y);
    Ok(Alignment {
        transform,
        aligned,
        residual,
        degenerate,
    })
}

fn mean_distance_mm(pred: &[Vec3], gt: &[Vec3], procrustes: bool) -> Result<f64> {
    let aligned;
    let p = if procrustes {
        aligned = procrustes_align(pred, gt, true)?.aligned;
        &aligned[..]
    } else {
        pred
    };
    Ok(1000.0 * p.iter().zip(gt).map(|(a, b)| (a - b).norm()).sum::<f64>() / p.len() as f64)
}

/// Mean per-joint position error over `subset`, in millimeters.
pub fn mpjpe(pred: &Pose3D, gt: &Pose3D, subset: &[usize], procrustes: bool) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::Invalid("empty joint subset".into()));
    }
    let pick = |pose: &Pose3D| -> Result<Vec<Vec3>> {
        subset
            .iter()
            .map(|&j| {
                pose.positions.get(j).copied().ok_or(Error::IndexOutOfRange {
                    what: "pose joints",
                    index: j,
                    len: pose.len(),
                })
            })
            .collect()
    };
    mean_distance_mm(&pick(pred)?, &pick(gt)?, procrustes)
}

/// Mean per-vertex position error for corresponding vertices, in millimeters.
pub fn mpvpe(pred: &[Vec3], gt: &[Vec3], procrustes: bool) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::CountMismatch {
            what: "vertices",
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    mean_distance_mm(pred, gt, procrustes)
}

/// Static 3-d tree for exact nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    // implicit tree: node = (lo, hi) slice of `order`, split at the median on `axis`
    order: Vec<usize>,
    axes: Vec<u8>,
}

const KD_LEAF: usize = 8;

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut t = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            axes: vec![0; points.len()],
        };
        t.build(0, points.len());
        t
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= KD_LEAF {
            return;
        }
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[lo..hi] {
            min = min.inf(&self.points[i]);
            max = max.sup(&self.points[i]);
        }
        let axis = (max - min).imax();
        let mid = lo + (hi - lo) / 2;
        let pts = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
        self.axes[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(squared distance, index)` of the nearest point; ties go to the lowest index.
    pub fn nearest(&self, q: &Vec3) -> Option<(f64, usize)> {
        let mut best = None;
        self.search(0, self.points.len(), q, &mut best);
        best
    }

    fn consider(&self, i: usize, q: &Vec3, best: &mut Option<(f64, usize)>) {
        let d = (self.points[i] - q).norm_squared();
        if best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
            *best = Some((d, i));
        }
    }

    fn search(&self, lo: usize, hi: usize, q: &Vec3, best: &mut Option<(f64, usize)>) {
        if hi - lo <= KD_LEAF {
            for &i in &self.order[lo..hi] {
                self.consider(i, q, best);
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid];
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - self.points[i][axis];
        self.consider(i, q, best);
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(near.0, near.1, q, best);
        if best.is_none_or(|(bd, _)| diff * diff <= bd) {
            self.search(far.0, far.1, q, best);
        }
    }
}

fn mean_nn_sq(from: &[Vec3], tree: &KdTree) -> f64 {
    from.iter().map(|p| tree.nearest(p).unwrap().0).sum::<f64>() / from.len() as f64
}

/// Chamfer distance scaled by 1000:
/// `1000 (mean_a min_b ‖a−b‖² + mean_b min_a ‖a−b‖²)`.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let ta = KdTree::new(a);
    let tb = KdTree::new(b);
    Ok(1000.0 * (mean_nn_sq(a, &tb) + mean_nn_sq(b, &ta)))
}

pub const DEFAULT_EMD_SAMPLES: usize = 512;

/// Farthest-point subsample starting from the lexicographically smallest
/// point. Returns indices in selection order; the whole set if `count >= len`.
pub fn farthest_point_sample(points: &[Vec3], count: usize) -> Vec<usize> {
    if count >= points.len() {
        return (0..points.len()).collect();
    }
    if count == 0 {
        return Vec::new();
    }
    let first = (0..points.len())
        .min_by(|&a, &b| {
            let (p, q) = (&points[a], &points[b]);
            p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y)).then(p.z.total_cmp(&q.z)).then(a.cmp(&b))
        })
        .unwrap();
    let mut chosen = vec![first];
    let mut dist: Vec<f64> = points.iter().map(|p| (p - points[first]).norm_squared()).collect();
    while chosen.len() < count {
        let mut next = 0;
        for i in 1..points.len() {
            if dist[i] > dist[next] {
                next = i;
            }
        }
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - points[next]).norm_squared());
        }
    }
    chosen
}

/// Exact minimum-cost assignment on a square cost matrix (row-major) by
/// shortest augmenting paths with potentials. Returns the column of each row.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based arrays, column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Earth mover's distance: both sets are farthest-point subsampled to
/// `min(samples, |a|, |b|)` points and matched one-to-one at minimum total
/// Euclidean cost. Returns the mean matched distance.
pub fn emd(a: &[Vec3], b: &[Vec3], samples: usize) -> Result<f64> {
    if a.is_empty() || b.is_empty() || samples == 0 {
        return Err(Error::EmptyPointSet);
    }
    let n = samples.min(a.len()).min(b.len());
    let sa: Vec<Vec3> = farthest_point_sample(a, n).into_iter().map(|i| a[i]).collect();
    let sb: Vec<Vec3> = farthest_point_sample(b, n).into_iter().map(|i| b[i]).collect();
    let mut cost = Vec::with_capacity(n * n);
    for p in &sa {
        cost.extend(sb.iter().map(|q| (p - q).norm()));
    }
    let assign = min_cost_assignment(&cost, n);
    // sum in row order so the result does not depend on the solver's path
    Ok(assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IcpConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    /// Maps the source onto the target.
    pub transform: Rigid,
    /// Mean squared nearest-neighbor distance, starting with the initial
    /// (centroid-aligned) value.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Rigid ICP of `source` onto `target`, started from the translation that
/// aligns the centroids.
pub fn icp(source: &[Vec3], target: &[Vec3], cfg: &IcpConfig) -> Result<IcpResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let tree = KdTree::new(target);
    let mut transform = Rigid::from_translation(centroid(target) - centroid(source));
    let mut moved: Vec<Vec3> = source.iter().map(|p| transform.apply(p)).collect();
    let mut nn: Vec<(f64, usize)> = moved.iter().map(|p| tree.nearest(p).unwrap()).collect();
    let mut residual = nn.iter().map(|x| x.0).sum::<f64>() / source.len() as f64;
    let mut residuals = vec![residual];
    let mut iterations = 0;
    if source.len() < 3 {
        return Ok(IcpResult {
            transform,
            residuals,
            iterations,
        });
    }
    while iterations < cfg.max_iterations && residual > 0.0 {
        let matched: Vec<Vec3> = nn.iter().map(|&(_, j)| target[j]).collect();
        let step = procrustes_align(&moved, &matched, false)?.transform.rigid();
        let candidate = step.compose(&transform);
        let cand_moved: Vec<Vec3> = source.iter().map(|p| candidate.apply(p)).collect();
        let cand_nn: Vec<(f64, usize)> = cand_moved.iter().map(|p| tree.nearest(p).unwrap()).collect();
        let cand_res = cand_nn.iter().map(|x| x.0).sum::<f64>() / source.len() as f64;
        iterations += 1;
        if cand_res > residual {
            // only possible through round-off; keep the better state
            break;
        }
        let change = (residual - cand_res) / residual;
        transform = candidate;
        moved = cand_moved;
        nn = cand_nn;
        residual = cand_res;
        residuals.push(residual);
        if change < cfg.tolerance {
            break;
        }
    }
    Ok(IcpResult {
        transform,
        residuals,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::exp_so3;
    use crate::skeleton::{Frame, LSP14};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), rng.random_range(-0.2..0.2)))
            .collect()
    }

    fn rot(rng: &mut ChaCha8Rng, max: f64) -> Mat3 {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        exp_so3(&(axis * rng.random_range(-max..max)))
    }

    #[test]
    fn procrustes_identity_and_exact_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = cloud(&mut rng, 20);
        let a = procrustes_align(&x, &x, true).unwrap();
        assert!(a.residual < 1e-24);
        assert!((a.transform.rotation - Mat3::identity()).norm() < 1e-12);
        let r = rot(&mut rng, 3.0);
        let t = Vec3::new(0.3, -2.0, 1.0);
        let y: Vec<Vec3> = x.iter().map(|p| r * p * 1.7 + t).collect();
        let a = procrustes_align(&x, &y, true).unwrap();
        assert!((a.transform.scale - 1.7).abs() < 1e-9);
        assert!((a.transform.rotation - r).norm() < 1e-9);
        assert!((a.transform.translation - t).norm() < 1e-9);
        assert!(!a.degenerate);
        assert!(matches!(procrustes_align(&x[..2], &y[..2], true), Err(Error::Degenerate(_))));
    }

    #[test]
    fn procrustes_reflection_guard_and_degenerate_flag() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = cloud(&mut rng, 12);
        let mirrored: Vec<Vec3> = x.iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect();
        let a = procrustes_align(&x, &mirrored, false).unwrap();
        assert!((a.transform.rotation.determinant() - 1.0).abs() < 1e-12);
        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let a = procrustes_align(&line, &line, true).unwrap();
        assert!(a.degenerate);
        assert!(a.residual < 1e-20);
    }

    #[test]
    fn procrustes_beats_random_rigid_alignments() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = cloud(&mut rng, 15);
            let y = cloud(&mut rng, 15);
            let best = procrustes_align(&x, &y, false).unwrap().residual;
            let (mx, my) = (centroid(&x), centroid(&y));
            for _ in 0..100 {
                let r = rot(&mut rng, core::f64::consts::PI);
                // optimal translation for a given rotation is the centroid match
                let res: f64 = x.iter().zip(&y).map(|(a, b)| (r * (a - mx) + my - b).norm_squared()).sum();
                assert!(best <= res + 1e-12);
            }
        }
    }

    fn pose(rng: &mut ChaCha8Rng) -> Pose3D {
        Pose3D::new(cloud(rng, 35), Frame::World)
    }

    #[test]
    fn mpjpe_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = pose(&mut rng);
        assert_eq!(mpjpe(&gt, &gt, &LSP14, false).unwrap(), 0.0);
        let shifted = gt.translated(&Vec3::new(0.006, 0.0, 0.008), Frame::World);
        assert!((mpjpe(&shifted, &gt, &LSP14, false).unwrap() - 10.0).abs() < 1e-9);
        assert!(mpjpe(&shifted, &gt, &LSP14, true).unwrap() < 1e-9);
        let pred = pose(&mut rng);
        let oracle = LSP14.iter().map(|&j| (pred.positions[j] - gt.positions[j]).norm()).sum::<f64>() / 14.0 * 1000.0;
        assert!((mpjpe(&pred, &gt, &LSP14, false).unwrap() - oracle).abs() < 1e-9);
        let short = Pose3D::new(gt.positions[..10].to_vec(), Frame::World);
        assert!(matches!(mpjpe(&short, &gt, &LSP14, false), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn mpvpe_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = cloud(&mut rng, 100);
        assert_eq!(mpvpe(&gt, &gt, false).unwrap(), 0.0);
        let shifted: Vec<Vec3> = gt.iter().map(|p| p + Vec3::new(0.0, 0.01, 0.0)).collect();
        assert!((mpvpe(&shifted, &gt, false).unwrap() - 10.0).abs() < 1e-9);
        assert!(mpvpe(&shifted, &gt, true).unwrap() < 1e-9);
        let pred = cloud(&mut rng, 100);
        let mut oracle = 0.0;
        for i in 0..100 {
            oracle += (pred[i] - gt[i]).norm();
        }
        assert!((mpvpe(&pred, &gt, false).unwrap() - oracle * 10.0).abs() < 1e-9);
        assert!(matches!(mpvpe(&pred[..3], &gt, false), Err(Error::CountMismatch { .. })));
    }

    fn chamfer_brute(a: &[Vec3], b: &[Vec3]) -> f64 {
        let dir = |x: &[Vec3], y: &[Vec3]| {
            x.iter()
                .map(|p| y.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / x.len() as f64
        };
        1000.0 * (dir(a, b) + dir(b, a))
    }

    #[test]
    fn chamfer_cases() {
        let a = [Vec3::zeros()];
        let b = [Vec3::new(0.1, 0.0, 0.0)];
        assert!((chamfer(&a, &b).unwrap() - 20.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = cloud(&mut rng, 50);
        assert_eq!(chamfer(&x, &x).unwrap(), 0.0);
        assert!(matches!(chamfer(&x, &[]), Err(Error::EmptyPointSet)));
        for n in [1, 7, 60, 200] {
            let a = cloud(&mut rng, n);
            let b = cloud(&mut rng, 200 - n / 2);
            assert!((chamfer(&a, &b).unwrap() - chamfer_brute(&a, &b)).abs() < 1e-9);
        }
    }

    #[test]
    fn kd_tree_matches_scan_including_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut pts = cloud(&mut rng, 300);
        pts.extend_from_slice(&pts.clone()[..50]);
        let tree = KdTree::new(&pts);
        for _ in 0..200 {
            let q = Vec3::new(rng.random_range(-1.2..1.2), rng.random_range(-0.6..0.6), rng.random_range(-0.3..0.3));
            let mut best = (f64::INFINITY, 0);
            for (i, p) in pts.iter().enumerate() {
                let d = (p - q).norm_squared();
                if d < best.0 {
                    best = (d, i);
                }
            }
            assert_eq!(tree.nearest(&q), Some(best));
        }
        assert_eq!(tree.nearest(&pts[310]).unwrap(), (0.0, 10));
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..n {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn emd_matches_permutation_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=8 {
            let a = cloud(&mut rng, n);
            let b = cloud(&mut rng, n);
            let best = permutations(n)
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).norm()).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                / n as f64;
            assert!((emd(&a, &b, 512).unwrap() - best).abs() < 1e-9, "n = {n}");
        }
    }

    #[test]
    fn emd_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = cloud(&mut rng, 40);
        assert_eq!(emd(&a, &a, 512).unwrap(), 0.0);
        let mut b = a.clone();
        b.reverse();
        b.swap(3, 17);
        assert_eq!(emd(&a, &b, 512).unwrap(), 0.0);
        assert!(matches!(emd(&[], &a, 10), Err(Error::EmptyPointSet)));
    }

    #[test]
    fn farthest_point_sample_is_spread_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = cloud(&mut rng, 500);
        let s = farthest_point_sample(&a, 32);
        assert_eq!(s, farthest_point_sample(&a, 32));
        let mut u = s.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), 32);
        assert_eq!(farthest_point_sample(&a, 600).len(), 500);
    }

    #[test]
    fn icp_identity_and_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = cloud(&mut rng, 400);
        let r = icp(&a, &a, &IcpConfig::default()).unwrap();
        assert!((r.transform.rotation - Mat3::identity()).norm() < 1e-12);
        assert!(r.transform.translation.norm() < 1e-12);
        let axis = Vec3::new(0.3, 1.0, -0.2).normalize();
        let truth = Rigid::new(exp_so3(&(axis * 8f64.to_radians())), Vec3::new(0.3, 0.0, 0.0));
        let b: Vec<Vec3> = a.iter().map(|p| truth.apply(p)).collect();
        let r = icp(&a, &b, &IcpConfig::default()).unwrap();
        assert!((r.transform.rotation - truth.rotation).norm() < 1e-3);
        assert!((r.transform.translation - truth.translation).norm() < 1e-3);
        assert!(r.residuals.windows(2).all(|w| w[1] <= w[0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn metrics_invariant_under_common_rigid_motion(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = cloud(&mut rng, 30);
            let b = cloud(&mut rng, 30);
            let m = Rigid::new(rot(&mut rng, 3.0), Vec3::new(rng.random_range(-5.0..5.0), 1.0, -2.0));
            let ma: Vec<Vec3> = a.iter().map(|p| m.apply(p)).collect();
            let mb: Vec<Vec3> = b.iter().map(|p| m.apply(p)).collect();
            let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1e-12);
            prop_assert!(rel(chamfer(&a, &b).unwrap(), chamfer(&ma, &mb).unwrap()) < 1e-9);
            prop_assert!(rel(emd(&a, &b, 512).unwrap(), emd(&ma, &mb, 512).unwrap()) < 1e-9);
            let (pa, pb) = (Pose3D::new(a.clone(), Frame::World), Pose3D::new(b.clone(), Frame::World));
            let (qa, qb) = (Pose3D::new(ma.clone(), Frame::World), Pose3D::new(mb.clone(), Frame::World));
            let sub: Vec<usize> = (0..30).collect();
            prop_assert!(rel(mpjpe(&pa, &pb, &sub, false).unwrap(), mpjpe(&qa, &qb, &sub, false).unwrap()) < 1e-9);
            prop_assert!(rel(mpjpe(&pa, &pb, &sub, true).unwrap(), mpjpe(&qa, &qb, &sub, true).unwrap()) < 1e-9);
        }

        #[test]
        fn chamfer_and_emd_symmetric(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = cloud(&mut rng, 25);
            let b = cloud(&mut rng, 25);
            prop_assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
            prop_assert!((emd(&a, &b, 512).unwrap() - emd(&b, &a, 512).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn procrustes_never_increases_residual(seed in 0u64..1000, scale in proptest::bool::ANY) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = cloud(&mut rng, 10);
            let y = cloud(&mut rng, 10);
            prop_assert!(procrustes_align(&x, &y, scale).unwrap().residual <= sum_squared(&x, &y) + 1e-12);
        }
    }
}
