//! `RGRD` raster container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "RGRD" | u32 version (=1) | u64 header length | JSON header
//!        | nrows*ncols f64 values (row-major) | nrows*ncols u8 mask (row-major)
//! ```
//!
//! The JSON header holds the grid fields plus `"dtype": "f64"` and
//! `"mask": "u8"`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GeoGrid, Mask, Raster};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RGRD";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    lat0: f64,
    lon0: f64,
    dlat: f64,
    dlon: f64,
    nrows: usize,
    ncols: usize,
    dtype: String,
    mask: String,
}

pub fn encode(r: &Raster) -> Vec<u8> {
    let g = r.grid();
    let header = serde_json::to_vec(&Header {
        lat0: g.lat0,
        lon0: g.lon0,
        dlat: g.dlat,
        dlon: g.dlon,
        nrows: g.nrows,
        ncols: g.ncols,
        dtype: "f64".into(),
        mask: "u8".into(),
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + g.len() * 9);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in r.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(r.valid().iter().map(|&b| b as u8));
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Raster> {
    let bad = |reason: &str| Error::format("RGRD", path, reason);
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
    let hbytes = body.get(..hlen).ok_or_else(|| bad("truncated header"))?;
    let h: Header = serde_json::from_slice(hbytes).map_err(|e| bad(&format!("header: {e}")))?;
    if h.dtype != "f64" || h.mask != "u8" {
        return Err(bad(&format!("unsupported dtype {} / mask {}", h.dtype, h.mask)));
    }
    let grid = GeoGrid::new(h.lat0, h.lon0, h.dlat, h.dlon, h.nrows, h.ncols)?;
    let n = grid.len();
    let data = &body[hlen..];
    if data.len() != n * 9 {
        return Err(bad(&format!("expected {} payload bytes, found {}", n * 9, data.len())));
    }
    let values = data[..n * 8]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut valid = Vec::with_capacity(n);
    for &b in &data[n * 8..] {
        match b {
            0 => valid.push(false),
            1 => valid.push(true),
            _ => return Err(bad(&format!("mask byte {b} is not 0 or 1"))),
        }
    }
    Raster::new(grid, values, valid)
}

pub fn write(path: &Path, r: &Raster) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(r)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Raster> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Masks are stored as rasters of 0/1 values, all valid.
pub fn write_mask(path: &Path, m: &Mask) -> Result<()> {
    let values = m.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    write(path, &Raster::from_values(*m.grid(), values)?)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let r = read(path)?;
    Mask::new(*r.grid(), r.values().iter().map(|&v| v != 0.0).collect())
}
