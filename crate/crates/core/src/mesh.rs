//! Triangle meshes segmented into body parts, normals and the uniform
//! graph Laplacian.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::geom::Vec3;
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

/// Faces with an area below this are rejected.
pub const MIN_FACE_AREA: f64 = 1e-12;

pub const TEMPLATE_VERTICES: usize = 6036;
pub const TEMPLATE_FACES: usize = 11576;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Part {
    Head,
    Arms,
    Shirt,
    Pants,
    Legs,
    Shoes,
}

impl Part {
    pub const ALL: [Part; 6] = [
        Part::Head,
        Part::Arms,
        Part::Shirt,
        Part::Pants,
        Part::Legs,
        Part::Shoes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Part::Head => "head",
            Part::Arms => "arms",
            Part::Shirt => "shirt",
            Part::Pants => "pants",
            Part::Legs => "legs",
            Part::Shoes => "shoes",
        }
    }

    /// Vertex count of this part in the released template mesh.
    pub fn template_vertex_count(self) -> usize {
        match self {
            Part::Head => 348,
            Part::Arms => 842,
            Part::Shirt => 2098,
            Part::Pants => 1439,
            Part::Legs => 372,
            Part::Shoes => 937,
        }
    }

    pub fn is_garment(self) -> bool {
        matches!(self, Part::Shirt | Part::Pants)
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Part {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Part::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| Error::Invalid(alloc::format!("unknown part `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub part: Part,
}

impl PartMesh {
    /// Validates face indices and rejects zero-area faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, part: Part) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= n {
                    return Err(Error::IndexOutOfRange {
                        what: "vertices",
                        index: i,
                        len: n,
                    });
                }
            }
            let area = triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
            if !(area >= MIN_FACE_AREA) {
                return Err(Error::DegenerateFace { face: fi, area });
            }
        }
        Ok(Self {
            vertices,
            faces,
            part,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> PartMesh {
        PartMesh {
            vertices,
            faces: self.faces.clone(),
            part: self.part,
        }
    }

    /// Disjoint union of several meshes, re-tagged as `part`.
    pub fn concat(meshes: &[PartMesh], part: Part) -> PartMesh {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for m in meshes {
            let base = vertices.len();
            vertices.extend_from_slice(&m.vertices);
            faces.extend(m.faces.iter().map(|f| f.map(|i| i + base)));
        }
        PartMesh {
            vertices,
            faces,
            part,
        }
    }

    /// Reverses the winding of every face.
    pub fn flipped(&self) -> PartMesh {
        PartMesh {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect(),
            part: self.part,
        }
    }

    /// Unique undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                set.insert((a.min(b), a.max(b)));
            }
        }
        set.into_iter().collect()
    }

    /// Sorted neighbor list per vertex.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        (b - a).cross(&(c - a)).normalize()
    }
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexNormals {
    pub normals: Vec<Vec3>,
    /// Vertices without incident faces; their normal is zero.
    pub isolated: Vec<usize>,
}

/// Area-weighted vertex normals. Orientation follows the face winding.
pub fn vertex_normals(mesh: &PartMesh) -> VertexNormals {
    let mut acc = vec![Vec3::zeros(); mesh.vertices.len()];
    for f in &mesh.faces {
        let (a, b, c) = (mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
        // cross product norm is twice the area, so this is area weighting
        let n = (b - a).cross(&(c - a));
        for &i in f {
            acc[i] += n;
        }
    }
    let mut isolated = Vec::new();
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(i, n)| match n.try_normalize(1e-300) {
            Some(n) => n,
            None => {
                isolated.push(i);
                Vec3::zeros()
            }
        })
        .collect();
    VertexNormals { normals, isolated }
}

/// Uniform Laplacian `L` with `(L v)_i = mean(v_j for j ∈ N(i)) − v_i`.
/// Isolated vertices get an all-zero row.
pub fn uniform_laplacian(mesh: &PartMesh) -> CsrMatrix {
    let adj = mesh.adjacency();
    let n = mesh.vertices.len();
    let mut triplets = Vec::new();
    for (i, nb) in adj.iter().enumerate() {
        if nb.is_empty() {
            continue;
        }
        let w = 1.0 / nb.len() as f64;
        for &j in nb {
            triplets.push((i, j, w));
        }
        triplets.push((i, i, -1.0));
    }
    CsrMatrix::from_triplets(n, n, &triplets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyMesh {
    pub parts: Vec<PartMesh>,
}

impl BodyMesh {
    pub fn new(parts: Vec<PartMesh>) -> Self {
        Self { parts }
    }

    pub fn num_vertices(&self) -> usize {
        self.parts.iter().map(|p| p.vertices.len()).sum()
    }

    pub fn num_faces(&self) -> usize {
        self.parts.iter().map(|p| p.faces.len()).sum()
    }

    pub fn part(&self, part: Part) -> Option<&PartMesh> {
        self.parts.iter().find(|p| p.part == part)
    }

    pub fn part_index(&self, part: Part) -> Option<usize> {
        self.parts.iter().position(|p| p.part == part)
    }

    /// All vertices in part order.
    pub fn vertices(&self) -> Vec<Vec3> {
        self.parts.iter().flat_map(|p| p.vertices.iter().copied()).collect()
    }

    /// Concatenates all parts into one vertex/face list.
    pub fn merged(&self) -> (Vec<Vec3>, Vec<[usize; 3]>) {
        let mut verts = Vec::with_capacity(self.num_vertices());
        let mut faces = Vec::with_capacity(self.num_faces());
        for p in &self.parts {
            let base = verts.len();
            verts.extend_from_slice(&p.vertices);
            faces.extend(p.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
        }
        (verts, faces)
    }

    /// Replaces all vertex positions, keeping topology.
    pub fn with_vertices(&self, vertices: &[Vec3]) -> Result<BodyMesh> {
        if vertices.len() != self.num_vertices() {
            return Err(Error::CountMismatch {
                what: "body vertices",
                expected: self.num_vertices(),
                got: vertices.len(),
            });
        }
        let mut offset = 0;
        let parts = self
            .parts
            .iter()
            .map(|p| {
                let n = p.vertices.len();
                let out = p.with_vertices(vertices[offset..offset + n].to_vec());
                offset += n;
                out
            })
            .collect();
        Ok(BodyMesh { parts })
    }

    /// Checks the per-part and total sizes of the released template.
    pub fn check_template_sizes(&self) -> Result<()> {
        for p in &self.parts {
            let expected = p.part.template_vertex_count();
            if p.vertices.len() != expected {
                return Err(Error::CountMismatch {
                    what: "template part vertices",
                    expected,
                    got: p.vertices.len(),
                });
            }
        }
        if self.num_vertices() != TEMPLATE_VERTICES {
            return Err(Error::CountMismatch {
                what: "template vertices",
                expected: TEMPLATE_VERTICES,
                got: self.num_vertices(),
            });
        }
        if self.num_faces() != TEMPLATE_FACES {
            return Err(Error::CountMismatch {
                what: "template faces",
                expected: TEMPLATE_FACES,
                got: self.num_faces(),
            });
        }
        Ok(())
    }
}

/// Regular grid in the xy plane, `nx × ny` vertices, counter-clockwise faces
/// (normal +z).
pub fn grid(nx: usize, ny: usize, spacing: f64, part: Part) -> PartMesh {
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push(Vec3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
        }
    }
    let mut faces = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            let b = a + 1;
            let c = a + nx;
            let d = c + 1;
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    PartMesh {
        vertices,
        faces,
        part,
    }
}

/// UV sphere with outward winding.
pub fn uv_sphere(center: Vec3, radius: f64, rings: usize, segments: usize, part: Part) -> PartMesh {
    let mut vertices = vec![center + Vec3::new(0.0, radius, 0.0)];
    for r in 1..rings {
        let phi = core::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let theta = 2.0 * core::f64::consts::PI * s as f64 / segments as f64;
            vertices.push(
                center
                    + radius * Vec3::new(phi.sin() * theta.cos(), phi.cos(), -phi.sin() * theta.sin()),
            );
        }
    }
    vertices.push(center - Vec3::new(0.0, radius, 0.0));
    let bottom = vertices.len() - 1;
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + s % segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s), ring(1, s + 1)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b) = (ring(r, s), ring(r, s + 1));
            let (c, d) = (ring(r + 1, s), ring(r + 1, s + 1));
            faces.push([a, c, d]);
            faces.push([a, d, b]);
        }
    }
    for s in 0..segments {
        faces.push([bottom, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    PartMesh {
        vertices,
        faces,
        part,
    }
}

/// Capsule around the segment `a`-`b` with outward winding. `cap_rings`
/// rings per hemisphere, `length_rings` sections along the cylinder.
pub fn capsule(
    a: Vec3,
    b: Vec3,
    radius: f64,
    cap_rings: usize,
    length_rings: usize,
    segments: usize,
    part: Part,
) -> PartMesh {
    use core::f64::consts::FRAC_PI_2;
    let axis = b - a;
    let len = axis.norm();
    let w = if len > 0.0 { axis / len } else { Vec3::y() };
    let helper = if w.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = w.cross(&helper).normalize();
    let v = w.cross(&u);
    // (axial offset from a, radius) of every ring between the poles
    let mut profile = Vec::new();
    for i in 1..=cap_rings {
        let phi = FRAC_PI_2 * i as f64 / cap_rings as f64;
        profile.push((-radius * phi.cos(), radius * phi.sin()));
    }
    for k in 1..=length_rings {
        profile.push((len * k as f64 / length_rings as f64, radius));
    }
    for i in 1..cap_rings {
        let psi = FRAC_PI_2 * i as f64 / cap_rings as f64;
        profile.push((len + radius * psi.sin(), radius * psi.cos()));
    }
    let mut vertices = vec![a - radius * w];
    for &(s, rho) in &profile {
        for k in 0..segments {
            let theta = 2.0 * core::f64::consts::PI * k as f64 / segments as f64;
            vertices.push(a + s * w + rho * (theta.cos() * u - theta.sin() * v));
        }
    }
    vertices.push(b + radius * w);
    let rings = profile.len();
    let last = vertices.len() - 1;
    let ring = |r: usize, k: usize| 1 + r * segments + k % segments;
    let mut faces = Vec::new();
    for k in 0..segments {
        faces.push([0, ring(0, k), ring(0, k + 1)]);
    }
    for r in 0..rings - 1 {
        for k in 0..segments {
            let (p, q) = (ring(r, k), ring(r, k + 1));
            let (c, d) = (ring(r + 1, k), ring(r + 1, k + 1));
            faces.push([p, c, d]);
            faces.push([p, d, q]);
        }
    }
    for k in 0..segments {
        faces.push([last, ring(rings - 1, k + 1), ring(rings - 1, k)]);
    }
    PartMesh {
        vertices,
        faces,
        part,
    }
}

/// Closest point of triangle `abc` to `p` and its barycentric coordinates.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Open cylinder (no caps) around `a`-`b` with outward winding.
pub fn tube(a: Vec3, b: Vec3, radius: f64, rings: usize, segments: usize, part: Part) -> PartMesh {
    let axis = b - a;
    let w = axis.normalize();
    let helper = if w.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = w.cross(&helper).normalize();
    let v = w.cross(&u);
    let mut vertices = Vec::with_capacity((rings + 1) * segments);
    for r in 0..=rings {
        let c = a + axis * (r as f64 / rings as f64);
        for k in 0..segments {
            let theta = 2.0 * core::f64::consts::PI * k as f64 / segments as f64;
            vertices.push(c + radius * (theta.cos() * u - theta.sin() * v));
        }
    }
    let idx = |r: usize, k: usize| r * segments + k % segments;
    let mut faces = Vec::new();
    for r in 0..rings {
        for k in 0..segments {
            let (p, q) = (idx(r, k), idx(r, k + 1));
            let (c, d) = (idx(r + 1, k), idx(r + 1, k + 1));
            faces.push([p, c, d]);
            faces.push([p, d, q]);
        }
    }
    PartMesh {
        vertices,
        faces,
        part,
    }
}
