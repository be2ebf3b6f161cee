#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{Matrix4, Vector4};

use crate::geom::Vec3;
use crate::mesh::{closest_point_on_triangle, triangle_area, PartMesh, MIN_FACE_AREA};
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

/// Down/up-sampling pair between a mesh and its decimation.
#[derive(Debug, Clone)]
pub struct SamplingOperator {
    /// `Nc × N` selection of the surviving vertices.
    pub down: CsrMatrix,
    /// `N × Nc` barycentric interpolation from the coarse mesh.
    pub up: CsrMatrix,
    pub coarse: PartMesh,
    /// Original index of every coarse vertex.
    pub kept: Vec<usize>,
    /// False when collapses ran out before the target count.
    pub reached_target: bool,
}

/// Relative weight of the planes that pin open boundaries.
const BOUNDARY_WEIGHT: f64 = 1e3;

fn plane_quadric(n: &Vec3, p: &Vec3, w: f64) -> Matrix4<f64> {
    let v = Vector4::new(n.x, n.y, n.z, -n.dot(p));
    v * v.transpose() * w
}

fn vertex_quadrics(verts: &[Vec3], faces: &[[usize; 3]]) -> Vec<Matrix4<f64>> {
    let mut q = vec![Matrix4::zeros(); verts.len()];
    let mut edge_faces: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for (fi, f) in faces.iter().enumerate() {
        let (a, b, c) = (verts[f[0]], verts[f[1]], verts[f[2]]);
        let n = (b - a).cross(&(c - a));
        let area = 0.5 * n.norm();
        if area <= 0.0 {
            continue;
        }
        let k = plane_quadric(&n.normalize(), &a, area);
        for &v in f {
            q[v] += k;
        }
        for e in 0..3 {
            let (x, y) = (f[e], f[(e + 1) % 3]);
            let key = (x.min(y), x.max(y));
            edge_faces.entry(key).or_insert((0, fi)).0 += 1;
        }
    }
    for (&(x, y), &(count, fi)) in &edge_faces {
        if count != 1 {
            continue;
        }
        let f = faces[fi];
        let (a, b, c) = (verts[f[0]], verts[f[1]], verts[f[2]]);
        let n = (b - a).cross(&(c - a)).normalize();
        let e = verts[y] - verts[x];
        let m = e.cross(&n);
        if m.norm() == 0.0 {
            continue;
        }
        let k = plane_quadric(&m.normalize(), &verts[x], BOUNDARY_WEIGHT * e.norm_squared());
        q[x] += k;
        q[y] += k;
    }
    q
}

fn quadric_cost(q: &Matrix4<f64>, p: &Vec3) -> f64 {
    let v = Vector4::new(p.x, p.y, p.z, 1.0);
    (v.transpose() * q * v)[(0, 0)].max(0.0)
}

/// Quadric error of collapsing edge `(a, b)` onto the better endpoint of the
/// original mesh.
pub fn edge_collapse_cost(mesh: &PartMesh, a: usize, b: usize) -> f64 {
    let q = vertex_quadrics(&mesh.vertices, &mesh.faces);
    let s = q[a] + q[b];
    quadric_cost(&s, &mesh.vertices[a]).min(quadric_cost(&s, &mesh.vertices[b]))
}

#[derive(PartialEq)]
struct Candidate {
    cost: f64,
    from: usize,
    to: usize,
    stamp: (u32, u32),
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (cost, from, to)
        other
            .cost
            .total_cmp(&self.cost)
            .then(other.from.cmp(&self.from))
            .then(other.to.cmp(&self.to))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Decimator<'a> {
    verts: &'a [Vec3],
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    incident: Vec<Vec<usize>>,
    alive: Vec<bool>,
    quadric: Vec<Matrix4<f64>>,
    version: Vec<u32>,
}

impl Decimator<'_> {
    fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.incident[v]
            .iter()
            .filter(|&&f| self.face_alive[f])
            .flat_map(|&f| self.faces[f])
            .filter(|&u| u != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn push_edges(&self, v: usize, heap: &mut BinaryHeap<Candidate>) {
        for u in self.neighbors(v) {
            let s = self.quadric[u] + self.quadric[v];
            for (from, to) in [(u, v), (v, u)] {
                heap.push(Candidate {
                    cost: quadric_cost(&s, &self.verts[to]),
                    from,
                    to,
                    stamp: (self.version[from], self.version[to]),
                });
            }
        }
    }

    fn valid(&self, from: usize, to: usize) -> bool {
        let nf = self.neighbors(from);
        if nf.binary_search(&to).is_err() {
            return false;
        }
        let nt = self.neighbors(to);
        let mut shared_faces = 0;
        let mut opposite = Vec::new();
        for &f in &self.incident[from] {
            if self.face_alive[f] && self.faces[f].contains(&to) {
                shared_faces += 1;
                opposite.extend(self.faces[f].iter().copied().filter(|&x| x != from && x != to));
            }
        }
        opposite.sort_unstable();
        opposite.dedup();
        let common: Vec<usize> = nf.iter().copied().filter(|x| nt.binary_search(x).is_ok()).collect();
        if common != opposite || shared_faces == 0 {
            return false;
        }
        let remaining = self.incident[from]
            .iter()
            .chain(&self.incident[to])
            .filter(|&&f| self.face_alive[f] && !(self.faces[f].contains(&from) && self.faces[f].contains(&to)))
            .count();
        if remaining == 0 {
            return false;
        }
        for &f in &self.incident[from] {
            if !self.face_alive[f] || self.faces[f].contains(&to) {
                continue;
            }
            let old = self.faces[f];
            let new = old.map(|x| if x == from { to } else { x });
            let (a, b, c) = (self.verts[old[0]], self.verts[old[1]], self.verts[old[2]]);
            let n_old = (b - a).cross(&(c - a));
            let (a, b, c) = (self.verts[new[0]], self.verts[new[1]], self.verts[new[2]]);
            let n_new = (b - a).cross(&(c - a));
            if triangle_area(&a, &b, &c) <= MIN_FACE_AREA || n_old.dot(&n_new) <= 0.0 {
                return false;
            }
        }
        true
    }

    fn collapse(&mut self, from: usize, to: usize) {
        let inc = core::mem::take(&mut self.incident[from]);
        for f in inc {
            if !self.face_alive[f] {
                continue;
            }
            if self.faces[f].contains(&to) {
                self.face_alive[f] = false;
            } else {
                for x in self.faces[f].iter_mut() {
                    if *x == from {
                        *x = to;
                    }
                }
                self.incident[to].push(f);
            }
        }
        self.alive[from] = false;
        let qf = self.quadric[from];
        self.quadric[to] += qf;
        self.version[to] += 1;
        self.version[from] += 1;
    }
}

/// Greedy quadric-error decimation by endpoint edge collapses until at most
/// `N / factor` vertices remain. Kept vertices keep their positions; removed
/// ones are interpolated from their closest coarse triangle.
pub fn build_sampling(mesh: &PartMesh, factor: usize) -> Result<SamplingOperator> {
    if factor == 0 {
        return Err(Error::Invalid("sampling factor must be at least 1".into()));
    }
    let n = mesh.vertices.len();
    let target = n / factor;
    let mut dec = Decimator {
        verts: &mesh.vertices,
        faces: mesh.faces.clone(),
        face_alive: vec![true; mesh.faces.len()],
        incident: vec![Vec::new(); n],
        alive: vec![true; n],
        quadric: vertex_quadrics(&mesh.vertices, &mesh.faces),
        version: vec![0; n],
    };
    for (fi, f) in mesh.faces.iter().enumerate() {
        for &v in f {
            dec.incident[v].push(fi);
        }
    }
    let mut alive_count = n;
    if factor > 1 {
        let mut heap = BinaryHeap::new();
        for v in 0..n {
            for u in dec.neighbors(v) {
                if u > v {
                    let s = dec.quadric[u] + dec.quadric[v];
                    for (from, to) in [(u, v), (v, u)] {
                        heap.push(Candidate {
                            cost: quadric_cost(&s, &mesh.vertices[to]),
                            from,
                            to,
                            stamp: (0, 0),
                        });
                    }
                }
            }
        }
        while alive_count > target {
            let Some(c) = heap.pop() else { break };
            if !dec.alive[c.from] || !dec.alive[c.to] || c.stamp != (dec.version[c.from], dec.version[c.to]) {
                continue;
            }
            if !dec.valid(c.from, c.to) {
                continue;
            }
            dec.collapse(c.from, c.to);
            alive_count -= 1;
            dec.push_edges(c.to, &mut heap);
        }
    }

    let kept: Vec<usize> = (0..n).filter(|&v| dec.alive[v]).collect();
    let mut slot = vec![usize::MAX; n];
    for (i, &v) in kept.iter().enumerate() {
        slot[v] = i;
    }
    let coarse_faces: Vec<[usize; 3]> = (0..dec.faces.len())
        .filter(|&f| dec.face_alive[f])
        .map(|f| dec.faces[f].map(|x| slot[x]))
        .collect();
    let coarse = PartMesh::new(kept.iter().map(|&v| mesh.vertices[v]).collect(), coarse_faces, mesh.part)?;
    let down = CsrMatrix::from_triplets(
        kept.len(),
        n,
        &kept.iter().enumerate().map(|(i, &v)| (i, v, 1.0)).collect::<Vec<_>>(),
    );
    let mut up = Vec::new();
    for v in 0..n {
        if slot[v] != usize::MAX {
            up.push((v, slot[v], 1.0));
            continue;
        }
        let p = mesh.vertices[v];
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        for (fi, f) in coarse.faces.iter().enumerate() {
            let (a, b, c) = (coarse.vertices[f[0]], coarse.vertices[f[1]], coarse.vertices[f[2]]);
            let (q, bary) = closest_point_on_triangle(&p, &a, &b, &c);
            let d = (q - p).norm_squared();
            if best.is_none_or(|b| d < b.0) {
                best = Some((d, fi, bary));
            }
        }
        match best {
            Some((_, fi, bary)) => {
                for k in 0..3 {
                    if bary[k] != 0.0 {
                        up.push((v, coarse.faces[fi][k], bary[k]));
                    }
                }
            }
            None => {
                let nearest = (0..kept.len())
                    .min_by(|&a, &b| {
                        (coarse.vertices[a] - p)
                            .norm_squared()
                            .total_cmp(&(coarse.vertices[b] - p).norm_squared())
                    })
                    .ok_or_else(|| Error::Degenerate("decimation left no vertices".into()))?;
                up.push((v, nearest, 1.0));
            }
        }
    }
    let up = CsrMatrix::from_triplets(n, kept.len(), &up);
    Ok(SamplingOperator {
        down,
        up,
        coarse,
        kept,
        reached_target: alive_count <= target,
    })
}
