#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use crate::geom::Vec3;
use crate::mesh::{vertex_normals, PartMesh};
use crate::{Error, Result};

/// Padding marker inside a spiral; gathers a zero feature.
pub const PAD: u32 = u32::MAX;

/// Fixed-length neighbor sequence per vertex, row-major `N × len`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpiralIndices {
    pub len: usize,
    pub dilation: usize,
    pub indices: Vec<u32>,
}

impl SpiralIndices {
    pub fn num_vertices(&self) -> usize {
        self.indices.len().checked_div(self.len).unwrap_or(0)
    }

    pub fn get(&self, v: usize) -> &[u32] {
        &self.indices[v * self.len..(v + 1) * self.len]
    }
}

/// Angle in `[0, 2π)`.
fn wrap_angle(a: f64) -> f64 {
    let r = a % TAU;
    if r < 0.0 {
        r + TAU
    } else {
        r
    }
}

/// Builds one spiral per vertex: the vertex itself, then the BFS rings around
/// it, each ring ordered counter-clockwise about the vertex normal starting
/// from the member most aligned with the x axis projected to the tangent
/// plane (y when x is nearly normal). After the vertex itself every
/// `dilation`-th entry is kept. `hops` limits the ring depth. Isolated
/// vertices get an all-padding spiral.
pub fn build_spirals(mesh: &PartMesh, len: usize, dilation: usize, hops: Option<usize>) -> Result<SpiralIndices> {
    if len == 0 || dilation == 0 {
        return Err(Error::Invalid("spiral length and dilation must be positive".into()));
    }
    let n = mesh.vertices.len();
    let adj = mesh.adjacency();
    let normals = vertex_normals(mesh).normals;
    let needed = if len > 1 { (len - 2) * dilation + 1 } else { 0 };
    let mut indices = vec![PAD; n * len];
    let mut depth = vec![usize::MAX; n];
    let mut touched = Vec::new();
    for v in 0..n {
        if adj[v].is_empty() {
            continue;
        }
        let p = mesh.vertices[v];
        let nrm = normals[v];
        let mut e1 = Vec3::x() - nrm * nrm.x;
        if e1.norm() < 1e-6 {
            e1 = Vec3::y() - nrm * nrm.y;
        }
        let e1 = e1.normalize();
        let e2 = nrm.cross(&e1);

        let mut seq: Vec<u32> = Vec::with_capacity(needed);
        for &t in &touched {
            depth[t] = usize::MAX;
        }
        touched.clear();
        depth[v] = 0;
        touched.push(v);
        let mut ring = vec![v];
        let mut d = 0;
        while seq.len() < needed && !ring.is_empty() && hops.is_none_or(|h| d < h) {
            d += 1;
            let mut next = Vec::new();
            for &r in &ring {
                for &u in &adj[r] {
                    if depth[u] == usize::MAX {
                        depth[u] = d;
                        touched.push(u);
                        next.push(u);
                    }
                }
            }
            let keyed: Vec<(f64, f64, usize)> = next
                .iter()
                .map(|&u| {
                    let q = mesh.vertices[u] - p;
                    let (x, y) = (q.dot(&e1), q.dot(&e2));
                    let r = (x * x + y * y).sqrt();
                    let cos = if r > 0.0 { x / r } else { -1.0 };
                    (y.atan2(x), cos, u)
                })
                .collect();
            if let Some(start) = keyed
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)))
                .map(|k| k.0)
            {
                let mut order: Vec<(f64, usize)> =
                    keyed.iter().map(|k| (wrap_angle(k.0 - start), k.2)).collect();
                order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                seq.extend(order.iter().map(|o| o.1 as u32));
            }
            ring = next;
        }
        let row = &mut indices[v * len..(v + 1) * len];
        row[0] = v as u32;
        for (slot, k) in row[1..].iter_mut().zip((0..).step_by(dilation)) {
            if let Some(&u) = seq.get(k) {
                *slot = u;
            }
        }
    }
    Ok(SpiralIndices { len, dilation, indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Part;

    /// Regular triangular lattice, unit spacing, counter-clockwise faces.
    fn hex_lattice(n: usize) -> PartMesh {
        let h = 3f64.sqrt() / 2.0;
        let mut vertices = Vec::new();
        for j in 0..n {
            for i in 0..n {
                vertices.push(Vec3::new(i as f64 + 0.5 * j as f64, h * j as f64, 0.0));
            }
        }
        let mut faces = Vec::new();
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let a = j * n + i;
                faces.push([a, a + 1, a + n]);
                faces.push([a + 1, a + n + 1, a + n]);
            }
        }
        PartMesh::new(vertices, faces, Part::Shirt).unwrap()
    }

    fn find(mesh: &PartMesh, p: Vec3) -> u32 {
        mesh.vertices.iter().position(|v| (v - p).norm() < 1e-9).unwrap() as u32
    }

    fn dir(deg: f64) -> Vec3 {
        let r = deg.to_radians();
        Vec3::new(r.cos(), r.sin(), 0.0)
    }

    #[test]
    fn hex_interior_one_ring() {
        let m = hex_lattice(7);
        let sp = build_spirals(&m, 7, 1, None).unwrap();
        let c = 3 * 7 + 3;
        let p = m.vertices[c];
        let expected: Vec<u32> = core::iter::once(c as u32)
            .chain((0..6).map(|k| find(&m, p + dir(60.0 * k as f64))))
            .collect();
        assert_eq!(sp.get(c), &expected[..]);
    }

    #[test]
    fn hex_dilation_two_matches_hand_rings() {
        let m = hex_lattice(9);
        let sp = build_spirals(&m, 7, 2, None).unwrap();
        let c = 4 * 9 + 4;
        let p = m.vertices[c];
        let ring1: Vec<Vec3> = (0..6).map(|k| p + dir(60.0 * k as f64)).collect();
        // second ring sorted by angle: corners at 0, 60.. (distance 2) and
        // edge midpoints at 30, 90.. (distance √3)
        let ring2: Vec<Vec3> = (0..12)
            .map(|k| {
                let deg = 30.0 * k as f64;
                let r = if k % 2 == 0 { 2.0 } else { 3f64.sqrt() };
                p + dir(deg) * r
            })
            .collect();
        let seq: Vec<Vec3> = ring1.iter().chain(&ring2).copied().collect();
        let expected: Vec<u32> = core::iter::once(c as u32)
            .chain((0..6).map(|k| find(&m, seq[2 * k])))
            .collect();
        assert_eq!(sp.get(c), &expected[..]);
    }

    #[test]
    fn deterministic_padding_and_isolated() {
        let mut m = hex_lattice(4);
        m.vertices.push(Vec3::new(10.0, 10.0, 0.0));
        let a = build_spirals(&m, 9, 1, None).unwrap();
        let b = build_spirals(&m, 9, 1, None).unwrap();
        assert_eq!(a, b);
        assert!(a.get(16).iter().all(|&i| i == PAD));
        // corner vertex 0 has 2 neighbors in a small mesh, spiral is valid
        for v in 0..16 {
            assert_eq!(a.get(v)[0], v as u32);
            assert!(a.get(v).iter().all(|&i| i == PAD || (i as usize) < 16));
        }
        let one_hop = build_spirals(&m, 20, 1, Some(1)).unwrap();
        assert!(one_hop.get(0)[1..].iter().filter(|&&i| i != PAD).count() <= 3);
    }
}
