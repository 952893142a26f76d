//! Flat little-endian weight files.
//!
//! ```text
//! "NSRW"  version:u32  count:u32
//! repeated count times:
//!   name_len:u16  name:utf-8  rank:u8  dims:u32×rank  dtype:u8 (0 = f32)  payload:f32×Πdims
//! ```
//!
//! Tensors appear in parameter visit order. Kernels are rank 4, per-channel
//! vectors rank 1.

use std::path::Path;

use crate::error::{Error, Result};
use crate::zoo::ModelGraph;

pub const MAGIC: &[u8; 4] = b"NSRW";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encoded_len(g: &ModelGraph) -> usize {
    12 + g
        .param_views()
        .iter()
        .map(|p| 2 + p.name.len() + 1 + 4 * p.shape.len() + 1 + 4 * p.data.len())
        .sum::<usize>()
}

pub fn encode(g: &ModelGraph) -> Vec<u8> {
    let views = g.param_views();
    let mut out = Vec::with_capacity(encoded_len(g));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(views.len() as u32).to_le_bytes());
    for p in &views {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(DTYPE_F32);
        for v in p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(Error::WeightFormat("bad magic, not an NSRW file".into()));
    }
    let version = r.u32().ok_or_else(|| Error::WeightFormat("truncated header".into()))?;
    if version != VERSION {
        return Err(Error::WeightFormat(format!("unsupported version {version}")));
    }
    let count = r.u32().ok_or_else(|| Error::WeightFormat("truncated header".into()))?;
    let mut out: Vec<NamedTensor> = Vec::new();
    for k in 0..count as usize {
        let placeholder = format!("#{k}");
        let trunc = |name: &str, what: &str| Error::WeightTensor {
            name: name.to_string(),
            detail: format!("truncated {what}"),
        };
        let len = r.u16().ok_or_else(|| trunc(&placeholder, "name length"))? as usize;
        let name_bytes = r.take(len).ok_or_else(|| trunc(&placeholder, "name"))?;
        let name = String::from_utf8(name_bytes.to_vec()).map_err(|_| Error::WeightTensor {
            name: placeholder.clone(),
            detail: "name is not utf-8".into(),
        })?;
        if out.iter().any(|t| t.name == name) {
            return Err(Error::WeightTensor {
                name,
                detail: "duplicate name".into(),
            });
        }
        let rank = r.u8().ok_or_else(|| trunc(&name, "rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32().ok_or_else(|| trunc(&name, "dims"))? as usize);
        }
        let dtype = r.u8().ok_or_else(|| trunc(&name, "dtype"))?;
        if dtype != DTYPE_F32 {
            return Err(Error::WeightTensor {
                name,
                detail: format!("unknown dtype code {dtype}"),
            });
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let payload = numel
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| r.take(n))
            .ok_or_else(|| trunc(&name, "payload"))?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push(NamedTensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::WeightFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

/// Copies decoded tensors into a graph with matching topology.
pub fn apply(g: &ModelGraph, tensors: &[NamedTensor]) -> Result<ModelGraph> {
    let expected: Vec<(String, Vec<usize>)> = g.param_views().iter().map(|p| (p.name.clone(), p.shape.clone())).collect();
    if expected.len() != tensors.len() {
        return Err(Error::WeightFormat(format!(
            "file has {} tensors, {} expects {}",
            tensors.len(),
            g.arch,
            expected.len()
        )));
    }
    let mut out = g.clone();
    for ((buf, (name, shape)), t) in out.params_mut().into_iter().zip(&expected).zip(tensors) {
        if &t.name != name || &t.shape != shape {
            return Err(Error::WeightTensor {
                name: t.name.clone(),
                detail: format!("expected `{name}` with dims {shape:?}, found dims {:?}", t.shape),
            });
        }
        buf.copy_from_slice(&t.data);
    }
    Ok(out)
}

pub fn save_weights(g: &ModelGraph, path: &Path) -> Result<()> {
    std::fs::write(path, encode(g)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(g: &ModelGraph, path: &Path) -> Result<ModelGraph> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    apply(g, &decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_model, init_weights, ArchConfig, InitScheme};

    fn mv() -> ModelGraph {
        init_weights(&build_model("mvideosr", &ArchConfig::default()).unwrap(), InitScheme::FixedForTest, 5)
    }

    #[test]
    fn empty_graph_is_header_only() {
        let bytes = encode(&ModelGraph::empty("none"));
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[..4], b"NSRW");
        assert!(decode(&bytes).unwrap().is_empty());
    }

    #[test]
    fn mvideosr_size_arithmetic() {
        let g = mv();
        let bytes = encode(&g);
        let headers: usize = g.param_views().iter().map(|p| 2 + p.name.len() + 1 + 4 * p.shape.len() + 1).sum();
        assert_eq!(bytes.len(), 12 + headers + 4 * 3474);
        assert_eq!(bytes.len(), encoded_len(&g));
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let g = mv();
        let bytes = encode(&g);
        let back = apply(&build_model("mvideosr", &ArchConfig::default()).unwrap(), &decode(&bytes).unwrap()).unwrap();
        assert_eq!(back, g);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn truncation_names_tensor() {
        let bytes = encode(&mv());
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::WeightTensor { name, .. } => assert_eq!(name, "conv4.bias"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn rejects_bad_header_and_mismatch() {
        let mut bytes = encode(&mv());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::WeightFormat(_))));
        let mut bytes = encode(&mv());
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(Error::WeightFormat(_))));
        let xjtu = build_model("xjtu", &ArchConfig::default()).unwrap();
        assert!(apply(&xjtu, &decode(&encode(&mv())).unwrap()).is_err());
    }
}
