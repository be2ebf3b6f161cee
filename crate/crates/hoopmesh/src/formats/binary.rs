//! Little-endian binary containers.
//!
//! Map stack: `"HMMP"`, u32 version, u32 joints, u32 res, u8 has-location,
//! then `joints·res²` heat values and optionally `joints·3·res²` location
//! values, all f64.
//!
//! Network parameters: `"HMNP"`, u32 version, u32 tensor count, then per
//! tensor u32 name length, UTF-8 name, u32 rank, u64 dims, f64 values.

use std::path::Path;

use hoopmesh_core::codec::{HeatmapStack, LocationMapStack};
use hoopmesh_core::meshnet::{NetParams, Tensor};

use super::{read_bytes, write_bytes};
use crate::{Error, Result};

const MAPS_MAGIC: &[u8; 4] = b"HMMP";
const PARAMS_MAGIC: &[u8; 4] = b"HMNP";
const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("unexpected end of data")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let bytes = self.take(n.checked_mul(8).ok_or("size overflow")?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> std::result::Result<(), String> {
        if self.take(4)? != magic {
            return Err("bad magic".into());
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(format!("unsupported version {v}"));
        }
        Ok(())
    }

    fn finish(&self) -> std::result::Result<(), String> {
        if self.pos != self.buf.len() {
            return Err("trailing bytes".into());
        }
        Ok(())
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_maps(heat: &HeatmapStack, loc: Option<&LocationMapStack>) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + 8 * heat.values.len() * 4);
    out.extend_from_slice(MAPS_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(heat.joints as u32).to_le_bytes());
    out.extend_from_slice(&(heat.res as u32).to_le_bytes());
    out.push(loc.is_some() as u8);
    put_f64s(&mut out, &heat.values);
    if let Some(l) = loc {
        put_f64s(&mut out, &l.values);
    }
    out
}

pub fn decode_maps(bytes: &[u8]) -> std::result::Result<(HeatmapStack, Option<LocationMapStack>), String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(MAPS_MAGIC)?;
    let joints = r.u32()? as usize;
    let res = r.u32()? as usize;
    let has_loc = r.u8()? != 0;
    let n = joints.checked_mul(res * res).ok_or("size overflow")?;
    let heat = HeatmapStack { joints, res, values: r.f64s(n)? };
    let loc = if has_loc {
        Some(LocationMapStack { joints, res, values: r.f64s(n * 3)? })
    } else {
        None
    };
    r.finish()?;
    Ok((heat, loc))
}

pub fn encode_params(params: &NetParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for (name, t) in params.names.iter().zip(&params.tensors) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_f64s(&mut out, &t.data);
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> std::result::Result<NetParams, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(PARAMS_MAGIC)?;
    let count = r.u32()? as usize;
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| "tensor name is not UTF-8")?.to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("size overflow")?;
        tensors.push(Tensor { shape, data: r.f64s(n)? });
        names.push(name);
    }
    r.finish()?;
    Ok(NetParams { names, tensors })
}

pub fn write_maps(path: &Path, heat: &HeatmapStack, loc: Option<&LocationMapStack>) -> Result<()> {
    write_bytes(path, &encode_maps(heat, loc))
}

pub fn read_maps(path: &Path) -> Result<(HeatmapStack, Option<LocationMapStack>)> {
    decode_maps(&read_bytes(path)?).map_err(|m| Error::format(path, m))
}

pub fn write_params(path: &Path, params: &NetParams) -> Result<()> {
    write_bytes(path, &encode_params(params))
}

pub fn read_params(path: &Path) -> Result<NetParams> {
    decode_params(&read_bytes(path)?).map_err(|m| Error::format(path, m))
}
