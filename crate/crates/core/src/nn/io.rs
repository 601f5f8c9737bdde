//! ITLM weights container.
//!
//! ```text
//! "ITLM" | u32 version = 1 | u64 manifest length | JSON manifest | f32 LE data
//! ```
//!
//! The manifest lists tensors in canonical order with shapes and byte
//! offsets into the data section, the architecture and the normalization
//! statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::resunet::{param_specs, Arch, Normalization, ResUnetParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ITLM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    arch: Arch,
    normalization: Normalization,
    tensors: Vec<TensorEntry>,
}

pub fn encode_weights(p: &ResUnetParams<f32>) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let tensors = p
        .specs
        .iter()
        .zip(&p.tensors)
        .map(|(s, t)| {
            let e = TensorEntry {
                name: s.name.clone(),
                shape: t.shape.clone(),
                dtype: "f32".into(),
                offset,
            };
            offset += 4 * t.len() as u64;
            e
        })
        .collect();
    let manifest = serde_json::to_vec(&Manifest {
        arch: p.arch.clone(),
        normalization: p.norm.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(16 + manifest.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for t in &p.tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8], path: &Path) -> Result<ResUnetParams<f32>> {
    let bad = |reason: String| Error::format("ITLM weights", path, reason);
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..).ok_or_else(|| bad("truncated".into()))?;
    if mlen > body.len() {
        return Err(bad("manifest length exceeds file".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..mlen]).map_err(|e| bad(e.to_string()))?;
    let data = &body[mlen..];

    let specs = param_specs(&manifest.arch);
    let mut tensors = Vec::with_capacity(specs.len());
    for s in &specs {
        let e = manifest
            .tensors
            .iter()
            .find(|e| e.name == s.name)
            .ok_or_else(|| bad(format!("missing tensor {}", s.name)))?;
        if e.shape != s.shape {
            return Err(bad(format!("tensor {} has shape {:?}, expected {:?}", s.name, e.shape, s.shape)));
        }
        if e.dtype != "f32" {
            return Err(bad(format!("tensor {} has dtype {}, expected f32", s.name, e.dtype)));
        }
        let n: usize = s.shape.iter().product();
        let start = e.offset as usize;
        let raw = data
            .get(start..start + 4 * n)
            .ok_or_else(|| bad(format!("tensor {} runs past the end of the file", s.name)))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push(Tensor::new(s.shape.clone(), values)?);
    }
    if let Some(extra) = manifest.tensors.iter().find(|e| !specs.iter().any(|s| s.name == e.name)) {
        return Err(bad(format!("unexpected tensor {}", extra.name)));
    }
    if manifest.normalization.input_mean.len() != manifest.arch.in_channels
        || manifest.normalization.input_std.len() != manifest.arch.in_channels
    {
        return Err(bad("normalization statistics do not match the input channels".into()));
    }
    Ok(ResUnetParams {
        arch: manifest.arch,
        specs,
        tensors,
        norm: manifest.normalization,
    })
}

pub fn save_weights(p: &ResUnetParams<f32>, path: &Path) -> Result<()> {
    let bytes = encode_weights(p)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<ResUnetParams<f32>> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Missing(format!("weights file {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    decode_weights(&bytes, path)
}
