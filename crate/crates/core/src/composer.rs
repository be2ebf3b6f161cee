//! Merges part meshes into one body and removes garment/body
//! interpenetration by a detect, push and optimize loop.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::geom::Vec3;
use crate::mesh::{closest_point_on_triangle, uniform_laplacian, vertex_normals, BodyMesh, Part, PartMesh};
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

/// Body part / garment pairs checked for collisions.
pub const COLLISION_PAIRS: [(Part, Part); 3] = [(Part::Arms, Part::Shirt), (Part::Head, Part::Shirt), (Part::Legs, Part::Pants)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub triangle: usize,
    pub point: Vec3,
    pub barycentric: [f64; 3],
    pub dist2: f64,
}

impl Nearest {
    fn better_than(&self, other: &Nearest) -> bool {
        self.dist2 < other.dist2 || (self.dist2 == other.dist2 && self.triangle < other.triangle)
    }
}

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: `start..start + count` into `order`; inner: children `left`, `left + 1`... stored explicitly.
    start: usize,
    count: usize,
    children: Option<(usize, usize)>,
}

/// Axis-aligned bounding-volume hierarchy over triangles for exact
/// nearest-point queries.
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    tris: Vec<[Vec3; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

const LEAF_SIZE: usize = 4;

fn box_dist2(p: &Vec3, lo: &Vec3, hi: &Vec3) -> f64 {
    let mut d = 0.0;
    for a in 0..3 {
        let v = if p[a] < lo[a] {
            lo[a] - p[a]
        } else if p[a] > hi[a] {
            p[a] - hi[a]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

impl TriangleBvh {
    pub fn new(vertices: &[Vec3], faces: &[[usize; 3]]) -> Self {
        let tris: Vec<[Vec3; 3]> = faces.iter().map(|f| f.map(|i| vertices[i])).collect();
        let mut bvh = Self {
            order: (0..tris.len()).collect(),
            tris,
            nodes: Vec::new(),
        };
        if !bvh.tris.is_empty() {
            let n = bvh.tris.len();
            bvh.build(0, n);
        }
        bvh
    }

    fn bounds(&self, start: usize, count: usize) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &t in &self.order[start..start + count] {
            for p in &self.tris[t] {
                lo = lo.inf(p);
                hi = hi.sup(p);
            }
        }
        (lo, hi)
    }

    fn build(&mut self, start: usize, count: usize) -> usize {
        let (lo, hi) = self.bounds(start, count);
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            start,
            count,
            children: None,
        });
        if count > LEAF_SIZE {
            let axis = (hi - lo).imax();
            let tris = &self.tris;
            let centroid = |t: usize| (tris[t][0][axis] + tris[t][1][axis] + tris[t][2][axis]) / 3.0;
            let mid = count / 2;
            self.order[start..start + count]
                .select_nth_unstable_by(mid, |&a, &b| centroid(a).total_cmp(&centroid(b)).then(a.cmp(&b)));
            let left = self.build(start, mid);
            let right = self.build(start + mid, count - mid);
            self.nodes[id].children = Some((left, right));
        }
        id
    }

    pub fn len(&self) -> usize {
        self.tris.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    fn test(&self, t: usize, p: &Vec3, best: &mut Option<Nearest>) {
        let [a, b, c] = &self.tris[t];
        let (q, bary) = closest_point_on_triangle(p, a, b, c);
        let cand = Nearest {
            triangle: t,
            point: q,
            barycentric: bary,
            dist2: (q - p).norm_squared(),
        };
        if best.as_ref().is_none_or(|b| cand.better_than(b)) {
            *best = Some(cand);
        }
    }

    /// Nearest surface point; ties go to the lowest triangle index.
    pub fn nearest(&self, p: &Vec3) -> Option<Nearest> {
        let mut best: Option<Nearest> = None;
        if self.nodes.is_empty() {
            return None;
        }
        let mut stack = vec![(0usize, box_dist2(p, &self.nodes[0].lo, &self.nodes[0].hi))];
        while let Some((id, d)) = stack.pop() {
            if best.as_ref().is_some_and(|b| d > b.dist2) {
                continue;
            }
            let node = &self.nodes[id];
            match node.children {
                None => {
                    for &t in &self.order[node.start..node.start + node.count] {
                        self.test(t, p, &mut best);
                    }
                }
                Some((l, r)) => {
                    let dl = box_dist2(p, &self.nodes[l].lo, &self.nodes[l].hi);
                    let dr = box_dist2(p, &self.nodes[r].lo, &self.nodes[r].hi);
                    if dl <= dr {
                        stack.push((r, dr));
                        stack.push((l, dl));
                    } else {
                        stack.push((l, dl));
                        stack.push((r, dr));
                    }
                }
            }
        }
        best
    }

    /// Same answer as [`TriangleBvh::nearest`] by scanning every triangle.
    pub fn nearest_brute_force(&self, p: &Vec3) -> Option<Nearest> {
        let mut best = None;
        for t in 0..self.tris.len() {
            self.test(t, p, &mut best);
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Collision {
    pub vertex: usize,
    /// Nearest garment surface point.
    pub point: Vec3,
    /// Outward garment normal at `point`.
    pub normal: Vec3,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CollisionReport {
    pub body: Part,
    pub garment: Part,
    pub collisions: Vec<Collision>,
}

pub const DEFAULT_BAND: f64 = 0.05;

/// Flags body vertices lying outside the garment shell within `band` of it:
/// with `p` the nearest garment point and `n` the garment normal there
/// (vertex normals interpolated barycentrically), `(v − p)·n > 0` and
/// `‖v − p‖ < band`.
pub fn detect_collisions(body: &PartMesh, garment: &PartMesh, band: f64) -> Result<CollisionReport> {
    if garment.faces.is_empty() {
        return Err(Error::EmptyGarment);
    }
    let bvh = TriangleBvh::new(&garment.vertices, &garment.faces);
    detect_with(body, garment, &bvh, band)
}

fn detect_with(body: &PartMesh, garment: &PartMesh, bvh: &TriangleBvh, band: f64) -> Result<CollisionReport> {
    let normals = vertex_normals(garment).normals;
    let mut collisions = Vec::new();
    for (i, v) in body.vertices.iter().enumerate() {
        let Some(hit) = bvh.nearest(v) else { continue };
        let f = garment.faces[hit.triangle];
        let n = (normals[f[0]] * hit.barycentric[0] + normals[f[1]] * hit.barycentric[1] + normals[f[2]] * hit.barycentric[2])
            .try_normalize(0.0)
            .unwrap_or_else(|| garment.face_normal(hit.triangle));
        let d = v - hit.point;
        let dist = d.norm();
        if d.dot(&n) > 0.0 && dist < band {
            collisions.push(Collision {
                vertex: i,
                point: hit.point,
                normal: n,
                distance: dist,
            });
        }
    }
    Ok(CollisionReport {
        body: body.part,
        garment: garment.part,
        collisions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PenaltyWeights {
    pub data: f64,
    pub laplacian: f64,
    pub edge: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self {
            data: 1.0,
            laplacian: 0.1,
            edge: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PenaltyLoss {
    pub value: f64,
    pub gradient: Vec<Vec3>,
    /// Edges left out because their reference length is zero.
    pub skipped_edges: usize,
}

/// Rigidity-preserving deformation energy against reference vertices `V*`.
#[derive(Debug, Clone)]
pub struct PenaltyProblem {
    laplacian: CsrMatrix,
    edges: Vec<(usize, usize, f64)>,
    reference: Vec<Vec3>,
    reference_lap: Vec<Vec3>,
    weights: PenaltyWeights,
    pub skipped_edges: usize,
}

impl PenaltyProblem {
    pub fn new(mesh: &PartMesh, reference: &[Vec3], weights: PenaltyWeights) -> Result<Self> {
        if reference.len() != mesh.vertices.len() {
            return Err(Error::CountMismatch {
                what: "reference vertices",
                expected: mesh.vertices.len(),
                got: reference.len(),
            });
        }
        let laplacian = uniform_laplacian(mesh);
        let mut edges = Vec::new();
        let mut skipped_edges = 0;
        for (a, b) in mesh.edges() {
            let l = (reference[a] - reference[b]).norm();
            if l > 0.0 {
                edges.push((a, b, l));
            } else {
                skipped_edges += 1;
            }
        }
        let reference_lap = laplacian.mul_vec3(reference);
        Ok(Self {
            laplacian,
            edges,
            reference: reference.to_vec(),
            reference_lap,
            weights,
            skipped_edges,
        })
    }

    /// `w_data Σ‖v − v*‖ + w_lap ‖ΔV − ΔV*‖_F + w_el Σ|E/E* − 1|` and its
    /// gradient (zero subgradient at the kinks).
    pub fn eval(&self, v: &[Vec3]) -> (f64, Vec<Vec3>) {
        let w = &self.weights;
        let mut grad = vec![Vec3::zeros(); v.len()];
        let mut value = 0.0;
        for ((g, p), q) in grad.iter_mut().zip(v).zip(&self.reference) {
            let d = p - q;
            let n = d.norm();
            value += w.data * n;
            if n > 0.0 {
                *g += d * (w.data / n);
            }
        }
        let lap = self.laplacian.mul_vec3(v);
        let diff: Vec<Vec3> = lap.iter().zip(&self.reference_lap).map(|(a, b)| a - b).collect();
        let fro = diff.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
        value += w.laplacian * fro;
        if fro > 0.0 {
            let s = w.laplacian / fro;
            for (r, d) in diff.iter().enumerate() {
                for (c, a) in self.laplacian.row(r) {
                    grad[c] += d * (a * s);
                }
            }
        }
        for &(a, b, rest) in &self.edges {
            let e = v[a] - v[b];
            let len = e.norm();
            let r = len / rest - 1.0;
            value += w.edge * r.abs();
            if r != 0.0 && len > 0.0 {
                let g = e * (w.edge * r.signum() / (rest * len));
                grad[a] += g;
                grad[b] -= g;
            }
        }
        (value, grad)
    }
}

/// One-shot evaluation of the deformation energy.
pub fn penetration_loss(v: &[Vec3], reference: &[Vec3], mesh: &PartMesh, weights: PenaltyWeights) -> Result<PenaltyLoss> {
    if v.len() != mesh.vertices.len() {
        return Err(Error::CountMismatch {
            what: "vertices",
            expected: mesh.vertices.len(),
            got: v.len(),
        });
    }
    let problem = PenaltyProblem::new(mesh, reference, weights)?;
    let (value, gradient) = problem.eval(v);
    Ok(PenaltyLoss {
        value,
        gradient,
        skipped_edges: problem.skipped_edges,
    })
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    /// Objective after each accepted step, starting with the initial value.
    pub values: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with Armijo backtracking. Every accepted step
/// lowers the objective; the run stops early when no decrease is found.
pub fn lbfgs<F>(x0: Vec<f64>, mut f: F, iterations: usize, memory: usize) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    let mut values = vec![fx];
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    for _ in 0..iterations {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm == 0.0 || x.is_empty() {
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = hist.back().map_or(1.0 / gnorm, |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            hist.clear();
            dir = g.iter().map(|v| -v / gnorm).collect();
            slope = dot(&g, &dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let (fnew, gnew) = f(&xn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * step * slope && fnew < fx {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if hist.len() == memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        fx = fnew;
        g = gnew;
        values.push(fx);
    }
    Ok(LbfgsOutcome { x, values })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComposeConfig {
    pub band: f64,
    /// Inward push applied to colliding vertices, meters.
    pub push: f64,
    pub inner_iterations: usize,
    pub max_outer: usize,
    pub memory: usize,
    pub weights: PenaltyWeightsConfig,
}

/// Serializable mirror of [`PenaltyWeights`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PenaltyWeightsConfig {
    pub data: f64,
    pub laplacian: f64,
    pub edge: f64,
}

impl From<PenaltyWeightsConfig> for PenaltyWeights {
    fn from(w: PenaltyWeightsConfig) -> Self {
        Self {
            data: w.data,
            laplacian: w.laplacian,
            edge: w.edge,
        }
    }
}

impl Default for ComposeConfig {
    fn default() -> Self {
        let w = PenaltyWeights::default();
        Self {
            band: DEFAULT_BAND,
            push: 0.01,
            inner_iterations: 20,
            max_outer: 10,
            memory: 10,
            weights: PenaltyWeightsConfig {
                data: w.data,
                laplacian: w.laplacian,
                edge: w.edge,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OuterIteration {
    pub collisions: usize,
    /// Deformation energy summed over the optimized parts before/after the
    /// inner solve.
    pub loss_before: f64,
    pub loss_after: f64,
}

#[derive(Debug, Clone)]
pub struct Composition {
    pub mesh: BodyMesh,
    pub residual_collisions: usize,
    pub iterations: Vec<OuterIteration>,
    /// `(part index, vertex)` of every vertex pinned during the run.
    pub pinned: Vec<(usize, usize)>,
}

/// Collisions of every body/garment pair present in `mesh`, grouped by body
/// part index.
pub fn all_collisions(mesh: &BodyMesh, band: f64) -> Result<Vec<(usize, Vec<Collision>)>> {
    let mut out = Vec::new();
    for (body, garment) in COLLISION_PAIRS {
        let (Some(bi), Some(gi)) = (mesh.part_index(body), mesh.part_index(garment)) else {
            continue;
        };
        let g = &mesh.parts[gi];
        if g.faces.is_empty() {
            return Err(Error::EmptyGarment);
        }
        let bvh = TriangleBvh::new(&g.vertices, &g.faces);
        let report = detect_with(&mesh.parts[bi], g, &bvh, band)?;
        if !report.collisions.is_empty() {
            out.push((bi, report.collisions));
        }
    }
    Ok(out)
}

/// Stepwise form of [`resolve_interpenetration`]: `detect`, `push`, `relax`
/// per outer iteration.
#[derive(Debug, Clone)]
pub struct Composer<'a> {
    input: &'a BodyMesh,
    cfg: ComposeConfig,
    mesh: BodyMesh,
    pinned: Vec<Vec<bool>>,
    problems: Vec<Option<PenaltyProblem>>,
    touched: Vec<usize>,
}

impl<'a> Composer<'a> {
    pub fn new(parts: &'a BodyMesh, cfg: &ComposeConfig) -> Self {
        Self {
            input: parts,
            cfg: cfg.clone(),
            mesh: parts.clone(),
            pinned: parts.parts.iter().map(|p| vec![false; p.vertices.len()]).collect(),
            problems: vec![None; parts.parts.len()],
            touched: Vec::new(),
        }
    }

    pub fn mesh(&self) -> &BodyMesh {
        &self.mesh
    }

    pub fn is_pinned(&self, part: usize, vertex: usize) -> bool {
        self.pinned[part][vertex]
    }

    /// `(part index, vertex)` of every vertex pinned so far.
    pub fn pinned(&self) -> Vec<(usize, usize)> {
        self.pinned
            .iter()
            .enumerate()
            .flat_map(|(p, flags)| flags.iter().enumerate().filter(|f| *f.1).map(move |(v, _)| (p, v)))
            .collect()
    }

    pub fn detect(&self) -> Result<Vec<(usize, Vec<Collision>)>> {
        all_collisions(&self.mesh, self.cfg.band)
    }

    /// Moves the colliding vertices inward along their body normals and pins
    /// them.
    pub fn push(&mut self, found: &[(usize, Vec<Collision>)]) {
        let mut touched: Vec<usize> = found.iter().map(|(p, _)| *p).collect();
        touched.sort_unstable();
        touched.dedup();
        for &pi in &touched {
            let normals = vertex_normals(&self.mesh.parts[pi]).normals;
            for (_, cols) in found.iter().filter(|(p, _)| *p == pi) {
                for c in cols {
                    self.mesh.parts[pi].vertices[c.vertex] -= normals[c.vertex] * self.cfg.push;
                    self.pinned[pi][c.vertex] = true;
                }
            }
        }
        self.touched = touched;
    }

    /// Inner L-BFGS solve over the free vertices of the parts touched by the
    /// last push. Returns the summed loss before and after.
    pub fn relax(&mut self) -> Result<(f64, f64)> {
        let mut loss_before = 0.0;
        let mut loss_after = 0.0;
        for &pi in &self.touched {
            if self.problems[pi].is_none() {
                let reference = &self.input.parts[pi];
                self.problems[pi] = Some(PenaltyProblem::new(reference, &reference.vertices, self.cfg.weights.into())?);
            }
            let problem = self.problems[pi].as_ref().unwrap();
            let free: Vec<usize> = (0..self.pinned[pi].len()).filter(|&v| !self.pinned[pi][v]).collect();
            let base = self.mesh.parts[pi].vertices.clone();
            let x0: Vec<f64> = free.iter().flat_map(|&v| [base[v].x, base[v].y, base[v].z]).collect();
            let assemble = |x: &[f64]| -> Vec<Vec3> {
                let mut v = base.clone();
                for (k, &i) in free.iter().enumerate() {
                    v[i] = Vec3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]);
                }
                v
            };
            let out = lbfgs(
                x0,
                |x| {
                    let (f, g) = problem.eval(&assemble(x));
                    (f, free.iter().flat_map(|&i| [g[i].x, g[i].y, g[i].z]).collect())
                },
                self.cfg.inner_iterations,
                self.cfg.memory,
            )?;
            loss_before += out.values[0];
            loss_after += *out.values.last().unwrap();
            if !loss_after.is_finite() {
                return Err(Error::NonFinite("penetration loss"));
            }
            self.mesh.parts[pi].vertices = assemble(&out.x);
        }
        Ok((loss_before, loss_after))
    }

    pub fn into_mesh(self) -> BodyMesh {
        self.mesh
    }
}

/// Repeatedly detects body vertices poking through garments, pushes them
/// inward along their own normals, pins them and re-optimizes the rest of the
/// part against the input shape.
pub fn resolve_interpenetration(parts: &BodyMesh, cfg: &ComposeConfig) -> Result<Composition> {
    let mut c = Composer::new(parts, cfg);
    let mut iterations = Vec::new();
    let mut residual = 0;
    for outer in 0..=cfg.max_outer {
        let found = c.detect()?;
        residual = found.iter().map(|(_, c)| c.len()).sum();
        if residual == 0 || outer == cfg.max_outer {
            break;
        }
        c.push(&found);
        let (loss_before, loss_after) = c.relax()?;
        iterations.push(OuterIteration {
            collisions: residual,
            loss_before,
            loss_after,
        });
    }
    let pinned = c.pinned();
    Ok(Composition {
        mesh: c.into_mesh(),
        residual_collisions: residual,
        iterations,
        pinned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{capsule, tube, uv_sphere};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn concentric_spheres() {
        let garment = uv_sphere(Vec3::zeros(), 1.0, 24, 48, Part::Shirt);
        let inner = uv_sphere(Vec3::zeros(), 0.8, 12, 24, Part::Arms);
        assert!(detect_collisions(&inner, &garment, DEFAULT_BAND).unwrap().collisions.is_empty());
        let far = uv_sphere(Vec3::zeros(), 1.2, 12, 24, Part::Arms);
        assert!(detect_collisions(&far, &garment, DEFAULT_BAND).unwrap().collisions.is_empty());
        let near = uv_sphere(Vec3::zeros(), 1.03, 12, 24, Part::Arms);
        let r = detect_collisions(&near, &garment, DEFAULT_BAND).unwrap();
        assert_eq!(r.collisions.len(), near.vertices.len());
        let empty = PartMesh::new(vec![Vec3::zeros()], vec![], Part::Shirt).unwrap();
        assert!(matches!(detect_collisions(&near, &empty, DEFAULT_BAND), Err(Error::EmptyGarment)));
    }

    proptest! {
        #[test]
        fn bvh_matches_brute_force(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mesh = capsule(
                Vec3::new(rng.random_range(-0.2..0.2), 0.0, 0.0),
                Vec3::new(0.3, rng.random_range(0.2..0.6), 0.1),
                rng.random_range(0.05..0.2),
                4, 8, 10, Part::Shirt,
            );
            let bvh = TriangleBvh::new(&mesh.vertices, &mesh.faces);
            for _ in 0..50 {
                let p = Vec3::new(rng.random_range(-0.6..0.8), rng.random_range(-0.5..1.0), rng.random_range(-0.5..0.5));
                prop_assert_eq!(bvh.nearest(&p), bvh.nearest_brute_force(&p));
            }
            // query at a vertex: several triangles tie at distance 0
            let v = mesh.vertices[7];
            prop_assert_eq!(bvh.nearest(&v), bvh.nearest_brute_force(&v));
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn loss_zero_at_reference_and_gradient_matches_differences() {
        let m = uv_sphere(Vec3::zeros(), 0.5, 5, 8, Part::Arms);
        let w = PenaltyWeights::default();
        assert_eq!(penetration_loss(&m.vertices, &m.vertices, &m, w).unwrap().value, 0.0);
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<Vec3> = m
                .vertices
                .iter()
                .map(|p| p + Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)))
                .collect();
            let l = penetration_loss(&v, &m.vertices, &m, w).unwrap();
            let h = 1e-6;
            for i in 0..v.len() {
                for c in 0..3 {
                    let mut a = v.clone();
                    a[i][c] += h;
                    let mut b = v.clone();
                    b[i][c] -= h;
                    let fd = (penetration_loss(&a, &m.vertices, &m, w).unwrap().value
                        - penetration_loss(&b, &m.vertices, &m, w).unwrap().value)
                        / (2.0 * h);
                    assert!(rel(fd, l.gradient[i][c]) < 1e-4, "{i},{c}: {fd} vs {}", l.gradient[i][c]);
                }
            }
        }
    }

    #[test]
    fn uniform_scale_edge_term() {
        let m = uv_sphere(Vec3::new(0.1, 0.2, 0.3), 0.5, 6, 10, Part::Arms);
        let eps = 1e-3;
        let c = Vec3::new(0.1, 0.2, 0.3);
        let v: Vec<Vec3> = m.vertices.iter().map(|p| c + (p - c) * (1.0 + eps)).collect();
        let w = PenaltyWeights { data: 0.0, laplacian: 0.0, edge: 1.0 };
        let l = penetration_loss(&v, &m.vertices, &m, w).unwrap();
        let per_edge = l.value / m.edges().len() as f64;
        assert!((per_edge - eps).abs() < 1e-9, "{per_edge}");
    }

    #[test]
    fn zero_length_reference_edges_are_skipped() {
        let mut m = uv_sphere(Vec3::zeros(), 0.5, 4, 6, Part::Arms);
        let mut reference = m.vertices.clone();
        reference[1] = reference[0];
        m.vertices = reference.clone();
        let l = penetration_loss(&m.vertices, &reference, &PartMesh { ..m.clone() }, PenaltyWeights::default());
        assert_eq!(l.unwrap().skipped_edges, 1);
    }

    #[test]
    fn lbfgs_minimizes_quadratic_monotonically() {
        let target = [1.0, -2.0, 3.0, 0.5];
        let scale = [1.0, 10.0, 0.1, 4.0];
        let out = lbfgs(
            vec![0.0; 4],
            |x| {
                let f = (0..4).map(|i| scale[i] * (x[i] - target[i]).powi(2)).sum();
                (f, (0..4).map(|i| 2.0 * scale[i] * (x[i] - target[i])).collect())
            },
            50,
            10,
        )
        .unwrap();
        assert!(out.values.windows(2).all(|w| w[1] < w[0]));
        for i in 0..4 {
            assert!((out.x[i] - target[i]).abs() < 1e-6);
        }
    }

    /// Arm capsule inside a sleeve with a bulge of `depth` poking through.
    pub(crate) fn sleeve_scene(depth: f64) -> BodyMesh {
        let sleeve = tube(Vec3::new(0.05, 0.0, 0.0), Vec3::new(0.55, 0.0, 0.0), 0.05, 25, 24, Part::Shirt);
        let mut arm = capsule(Vec3::zeros(), Vec3::new(0.6, 0.0, 0.0), 0.04, 4, 30, 24, Part::Arms);
        for v in &mut arm.vertices {
            let t = ((v.x - 0.3) / 0.06).abs();
            let radial = Vec3::new(0.0, v.y, v.z);
            let r = radial.norm();
            if t < 1.0 && r > 1e-9 && v.y > 0.0 {
                let bump = (0.05 + depth - 0.04) * (1.0 - t * t) * (v.y / r);
                *v += radial / r * bump;
            }
        }
        BodyMesh::new(vec![arm, sleeve])
    }

    #[test]
    fn pinned_vertices_survive_inner_solves() {
        let scene = sleeve_scene(0.006);
        let mut c = Composer::new(&scene, &ComposeConfig::default());
        let mut steps = 0;
        loop {
            let found = c.detect().unwrap();
            if found.is_empty() {
                break;
            }
            c.push(&found);
            let snapshot: Vec<_> = c.pinned().iter().map(|&(p, v)| c.mesh().parts[p].vertices[v]).collect();
            c.relax().unwrap();
            let after: Vec<_> = c.pinned().iter().map(|&(p, v)| c.mesh().parts[p].vertices[v]).collect();
            assert_eq!(snapshot, after);
            steps += 1;
            assert!(steps <= 10);
        }
        assert!(steps > 0);
    }

    #[test]
    fn no_collisions_leaves_input_untouched() {
        let scene = sleeve_scene(-0.005);
        let out = resolve_interpenetration(&scene, &ComposeConfig::default()).unwrap();
        assert_eq!(out.mesh, scene);
        assert_eq!(out.residual_collisions, 0);
        assert!(out.iterations.is_empty());
    }

    #[test]
    fn sleeve_penetration_is_removed() {
        let scene = sleeve_scene(0.005);
        let before = all_collisions(&scene, DEFAULT_BAND).unwrap();
        assert!(!before.is_empty());
        let out = resolve_interpenetration(&scene, &ComposeConfig::default()).unwrap();
        assert_eq!(out.residual_collisions, 0);
        assert!(out.iterations.len() <= 3, "{:?}", out.iterations);
        assert!(out.iterations.windows(2).all(|w| w[1].collisions <= w[0].collisions));
        for it in &out.iterations {
            assert!(it.loss_after <= it.loss_before);
        }
        let arm0 = &scene.parts[0];
        let arm1 = &out.mesh.parts[0];
        let mut region = vec![false; arm0.vertices.len()];
        let adj = arm0.adjacency();
        for &(_, v) in &out.pinned {
            region[v] = true;
            for &u in &adj[v] {
                region[u] = true;
            }
        }
        let mut change = 0.0;
        let mut count = 0;
        for (a, b) in arm0.edges() {
            if region[a] || region[b] {
                continue;
            }
            let l0 = (arm0.vertices[a] - arm0.vertices[b]).norm();
            let l1 = (arm1.vertices[a] - arm1.vertices[b]).norm();
            change += (l1 / l0 - 1.0).abs();
            count += 1;
        }
        assert!(change / (count as f64) < 0.01);
        // garment untouched
        assert_eq!(scene.parts[1], out.mesh.parts[1]);
    }
}
