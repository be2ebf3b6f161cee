//! Wavefront OBJ with one `g <part>` group per body part.

use std::fmt::Write as _;
use std::path::Path;

use hoopmesh_core::geom::Vec3;
use hoopmesh_core::mesh::{BodyMesh, Part, PartMesh};

use super::{read_text, write_bytes};
use crate::{Error, Result};

/// Parsed OBJ: vertices and faces grouped by the `g`/`o` statement that
/// preceded them. Face indices are global and zero-based.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjData {
    pub vertices: Vec<Vec3>,
    pub groups: Vec<ObjGroup>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjGroup {
    pub name: Option<String>,
    pub vertices: Vec<usize>,
    pub faces: Vec<[usize; 3]>,
}

fn part_from_name(name: &str) -> Option<Part> {
    Part::ALL.into_iter().find(|p| p.name() == name)
}

pub fn to_obj_string(body: &BodyMesh) -> String {
    let mut s = String::from("# hoopmesh body\n");
    let mut base = 1;
    for part in &body.parts {
        let _ = writeln!(s, "g {}", part.part.name());
        for v in &part.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for f in &part.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + base, f[1] + base, f[2] + base);
        }
        base += part.vertices.len();
    }
    s
}

fn parse_index(tok: &str, count: usize) -> std::result::Result<usize, String> {
    let first = tok.split('/').next().unwrap_or("");
    let i: i64 = first.parse().map_err(|_| format!("bad face index {tok:?}"))?;
    let idx = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        return Err("face index 0".into());
    };
    if idx < 0 || idx as usize >= count {
        return Err(format!("face index {i} out of range ({count} vertices)"));
    }
    Ok(idx as usize)
}

pub fn parse_obj(text: &str) -> std::result::Result<ObjData, String> {
    let mut data = ObjData::default();
    let mut current: Option<usize> = None;
    let group = |data: &mut ObjData, current: &mut Option<usize>| -> usize {
        if current.is_none() {
            data.groups.push(ObjGroup { name: None, vertices: vec![], faces: vec![] });
            *current = Some(data.groups.len() - 1);
        }
        current.unwrap()
    };
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        let Some(kw) = toks.next() else { continue };
        let rest: Vec<&str> = toks.collect();
        let err = |m: String| format!("line {}: {m}", ln + 1);
        match kw {
            "v" => {
                if rest.len() < 3 {
                    return Err(err("vertex needs 3 coordinates".into()));
                }
                let mut c = [0.0; 3];
                for k in 0..3 {
                    c[k] = rest[k].parse().map_err(|_| err(format!("bad coordinate {:?}", rest[k])))?;
                }
                let g = group(&mut data, &mut current);
                data.groups[g].vertices.push(data.vertices.len());
                data.vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(err("face needs at least 3 vertices".into()));
                }
                let idx = rest
                    .iter()
                    .map(|t| parse_index(t, data.vertices.len()))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(err)?;
                let g = group(&mut data, &mut current);
                // fan-triangulate polygons
                for k in 1..idx.len() - 1 {
                    data.groups[g].faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            "g" | "o" => {
                let name = rest.join(" ");
                data.groups.push(ObjGroup { name: Some(name), vertices: vec![], faces: vec![] });
                current = Some(data.groups.len() - 1);
            }
            _ => {}
        }
    }
    Ok(data)
}

impl ObjData {
    /// Body mesh from part-tagged groups; each group's faces must only use
    /// that group's vertices.
    pub fn to_body(&self) -> std::result::Result<BodyMesh, String> {
        let mut parts = Vec::new();
        for g in self.groups.iter().filter(|g| !(g.vertices.is_empty() && g.faces.is_empty())) {
            let name = g.name.as_deref().ok_or("geometry outside a part group")?;
            let part = part_from_name(name).ok_or_else(|| format!("unknown part {name:?}"))?;
            let mut local = std::collections::HashMap::new();
            for (k, &v) in g.vertices.iter().enumerate() {
                local.insert(v, k);
            }
            let faces = g
                .faces
                .iter()
                .map(|f| {
                    let mut out = [0; 3];
                    for k in 0..3 {
                        out[k] = *local.get(&f[k]).ok_or_else(|| format!("part {name} references a vertex of another group"))?;
                    }
                    Ok(out)
                })
                .collect::<std::result::Result<Vec<_>, String>>()?;
            let vertices = g.vertices.iter().map(|&v| self.vertices[v]).collect();
            parts.push(PartMesh::new(vertices, faces, part).map_err(|e| format!("part {name}: {e}"))?);
        }
        if parts.is_empty() {
            return Err("no geometry".into());
        }
        Ok(BodyMesh::new(parts))
    }
}

pub fn write_body_obj(path: &Path, body: &BodyMesh) -> Result<()> {
    write_bytes(path, to_obj_string(body).as_bytes())
}

pub fn read_obj(path: &Path) -> Result<ObjData> {
    parse_obj(&read_text(path)?).map_err(|m| Error::format(path, m))
}

pub fn read_body_obj(path: &Path) -> Result<BodyMesh> {
    read_obj(path)?.to_body().map_err(|m| Error::format(path, m))
}

/// Every vertex of an OBJ file, tagged or not.
pub fn read_obj_points(path: &Path) -> Result<Vec<Vec3>> {
    let data = read_obj(path)?;
    if data.vertices.is_empty() {
        return Err(Error::format(path, "no vertices"));
    }
    Ok(data.vertices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hoopmesh_core::mesh::{tube, uv_sphere};

    #[test]
    fn body_round_trip() {
        let body = BodyMesh::new(vec![
            uv_sphere(Vec3::new(0.0, 1.7, 0.0), 0.1, 4, 8, Part::Head),
            tube(Vec3::zeros(), Vec3::new(0.0, 0.5, 0.0), 0.15, 3, 8, Part::Shirt),
        ]);
        let back = parse_obj(&to_obj_string(&body)).unwrap().to_body().unwrap();
        assert_eq!(back, body);
    }

    #[test]
    fn polygons_negative_indices_and_slashes() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2//2 -2 -1\n";
        let d = parse_obj(text).unwrap();
        assert_eq!(d.groups[0].faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(d.to_body().is_err());
    }

    #[test]
    fn malformed_input() {
        assert!(parse_obj("v 0 0\n").is_err());
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n").is_err());
        assert!(parse_obj("g hat\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap().to_body().is_err());
        let cross = "g head\nv 0 0 0\nv 1 0 0\ng arms\nv 0 1 0\nf 1 2 3\n";
        assert!(parse_obj(cross).unwrap().to_body().is_err());
    }
}
