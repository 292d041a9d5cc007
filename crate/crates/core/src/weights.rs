//! `NSB1` weights container shared by the classifier and the detector.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NSB1"                              4-byte magic
//! u32 tensor_count
//! repeated tensor_count times:
//!     u16 name_len, name (UTF-8)
//!     u8  ndim, ndim x u32 dims
//! for each tensor in table order:
//!     product(dims) x f64 (IEEE 754)
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"NSB1";

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("not an NSB1 weights file (magic {0:?})")]
    Version([u8; 4]),
    #[error("weights file truncated: {0}")]
    Truncated(&'static str),
    #[error("tensor {name}: expected dims {expected:?}, file has {found:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("tensor {0} missing from weights file")]
    Missing(String),
    #[error("unexpected tensor {0} in weights file")]
    Unexpected(String),
    #[error("tensor {0} has non-finite values")]
    NonFinite(String),
    #[error("malformed tensor table: {0}")]
    Table(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Self {
        let t = Self { name: name.into(), dims, data };
        assert_eq!(t.data.len(), t.dims.iter().product::<usize>(), "tensor {}", t.name);
        t
    }
}

pub fn encode(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WeightsError> {
        if self.bytes.len() - self.pos < n {
            return Err(WeightsError::Truncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>, WeightsError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let mut m = [0u8; 4];
        for (d, s) in m.iter_mut().zip(bytes) {
            *d = *s;
        }
        return Err(WeightsError::Version(m));
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let count = cur.u32("tensor count")? as usize;
    let mut table = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = u16::from_le_bytes(cur.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(cur.take(len, "tensor name")?)
            .map_err(|_| WeightsError::Table("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = cur.take(1, "ndim")?[0] as usize;
        let dims = (0..ndim).map(|_| cur.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        table.push((name, dims));
    }
    let mut out = Vec::with_capacity(table.len());
    for (name, dims) in table {
        let n: usize = dims.iter().product();
        let raw = cur.take(n.checked_mul(8).ok_or(WeightsError::Truncated("payload"))?, "payload")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push(NamedTensor { name, dims, data });
    }
    if cur.pos != bytes.len() {
        return Err(WeightsError::Table(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(out)
}

pub fn save(tensors: &[NamedTensor], path: impl AsRef<Path>) -> Result<(), WeightsError> {
    let path = path.as_ref();
    fs::write(path, encode(tensors)).map_err(|source| WeightsError::Io { path: path.to_path_buf(), source })
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>, WeightsError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WeightsError::Io { path: path.to_path_buf(), source })?;
    decode(&bytes)
}

/// Checks a decoded table against the expected `(name, dims)` list, in
/// order, and hands back the tensor data.
pub fn expect_table(
    tensors: Vec<NamedTensor>,
    expected: &[(String, Vec<usize>)],
) -> Result<Vec<Vec<f64>>, WeightsError> {
    let mut found = tensors.into_iter();
    let mut out = Vec::with_capacity(expected.len());
    for (name, dims) in expected {
        let t = found.next().ok_or_else(|| WeightsError::Missing(name.clone()))?;
        if &t.name != name {
            return Err(WeightsError::Unexpected(t.name));
        }
        if &t.dims != dims {
            return Err(WeightsError::Shape { name: t.name, expected: dims.clone(), found: t.dims });
        }
        if !t.data.iter().all(|v| v.is_finite()) {
            return Err(WeightsError::NonFinite(t.name));
        }
        out.push(t.data);
    }
    if let Some(extra) = found.next() {
        return Err(WeightsError::Unexpected(extra.name));
    }
    Ok(out)
}
