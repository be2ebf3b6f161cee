//! Netpbm graymaps for line masks: binary `P5` on write, `P5`/`P2` on read.

use std::path::Path;

use hoopmesh_core::camera::LineMask;

use super::{read_bytes, write_bytes};
use crate::{Error, Result};

pub fn encode_pgm(mask: &LineMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Option<&'a str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| std::str::from_utf8(&self.bytes[start..self.pos]).ok()).flatten()
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, String> {
        self.next().and_then(|t| t.parse().ok()).ok_or_else(|| format!("missing or bad {what}"))
    }
}

/// Pixels brighter than half the maximum value are lines.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<LineMask, String> {
    let mut t = Tokens { bytes, pos: 0 };
    let magic = t.next().ok_or("empty file")?;
    if magic != "P5" && magic != "P2" {
        return Err(format!("unsupported magic {magic:?}"));
    }
    let width = t.number("width")?;
    let height = t.number("height")?;
    let maxval = t.number("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
        return Err(format!("unsupported header {width}x{height} max {maxval}"));
    }
    let n = width * height;
    let threshold = maxval / 2;
    let data: Vec<bool> = if magic == "P5" {
        let start = t.pos + 1;
        let raw = bytes.get(start..start + n).ok_or("truncated pixel data")?;
        raw.iter().map(|&v| v as usize > threshold).collect()
    } else {
        (0..n).map(|_| t.number("pixel").map(|v| v > threshold)).collect::<std::result::Result<_, _>>()?
    };
    Ok(LineMask { width, height, data })
}

pub fn write_mask(path: &Path, mask: &LineMask) -> Result<()> {
    write_bytes(path, &encode_pgm(mask))
}

pub fn read_mask(path: &Path) -> Result<LineMask> {
    decode_pgm(&read_bytes(path)?).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let mut m = LineMask::empty(7, 3);
        m.set(0, 0);
        m.set(6, 2);
        m.set(3, 1);
        assert_eq!(decode_pgm(&encode_pgm(&m)).unwrap(), m);
    }

    #[test]
    fn ascii_with_comments() {
        let m = decode_pgm(b"P2\n# mask\n3 2\n15\n0 15 0\n8 7 0\n").unwrap();
        assert_eq!(m.data, vec![false, true, false, true, false, false]);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(decode_pgm(b"").is_err());
        assert!(decode_pgm(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\0\0").is_err());
    }
}
