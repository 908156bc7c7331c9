//! Binary formats.
//!
//! Array files: an 8-byte magic, `u32` version, `u32` array count, then per
//! array `u32` rank, `u32` dims and the values as little-endian `f32`.
//!
//! Token files: `b"SISE"`, a version byte, `u16` layer count, `u32` frame
//! count, `u32` codebook size, then the layers row-major as `u16`.

use std::fs;
use std::path::Path;

use super::quantizer::FactorizedTokens;
use crate::error::{Error, Result};

pub const ARRAY_VERSION: u32 = 1;
pub const TOKEN_MAGIC: &[u8; 4] = b"SISE";
pub const TOKEN_VERSION: u8 = 1;

/// An n-dimensional array of reals, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }
}

pub fn encode_arrays(magic: &[u8; 8], arrays: &[Array]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&ARRAY_VERSION.to_le_bytes());
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        out.extend_from_slice(&(a.dims.len() as u32).to_le_bytes());
        for &d in &a.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &a.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.path, "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

pub fn decode_arrays(magic: &[u8; 8], bytes: &[u8], path: &Path) -> Result<Vec<Array>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != magic {
        return Err(Error::format(path, "bad magic"));
    }
    let version = r.u32()?;
    if version != ARRAY_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut arrays = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::format(path, format!("array rank {rank} too large")));
        }
        let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(path, "array too large"))?;
        let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::format(path, "array too large"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        arrays.push(Array { dims, data });
    }
    r.finish()?;
    Ok(arrays)
}

pub fn write_arrays(path: impl AsRef<Path>, magic: &[u8; 8], arrays: &[Array]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_arrays(magic, arrays)).map_err(|e| Error::io(path, e))
}

pub fn read_arrays(path: impl AsRef<Path>, magic: &[u8; 8]) -> Result<Vec<Array>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_arrays(magic, &bytes, path)
}

pub fn encode_tokens(tokens: &FactorizedTokens) -> Result<Vec<u8>> {
    let k = tokens.codebook_size();
    if k > u16::MAX as usize + 1 {
        return Err(Error::invalid(format!("codebook size {k} does not fit 16-bit tokens")));
    }
    let mut out = Vec::with_capacity(15 + 2 * tokens.n_layers() * tokens.len());
    out.extend_from_slice(TOKEN_MAGIC);
    out.push(TOKEN_VERSION);
    out.extend_from_slice(&(tokens.n_layers() as u16).to_le_bytes());
    out.extend_from_slice(&(tokens.len() as u32).to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    for &t in tokens.layers().iter().flatten() {
        out.extend_from_slice(&(t as u16).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tokens(bytes: &[u8], path: &Path) -> Result<FactorizedTokens> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != TOKEN_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = r.u8()?;
    if version != TOKEN_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let n_layers = r.u16()? as usize;
    let len = r.u32()? as usize;
    let k = r.u32()? as usize;
    if n_layers == 0 {
        return Err(Error::format(path, "zero layers"));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let raw = r.take(len.checked_mul(2).ok_or_else(|| Error::format(path, "too many frames"))?)?;
        layers.push(
            raw.chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
                .collect(),
        );
    }
    r.finish()?;
    FactorizedTokens::new(layers, k).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_tokens(path: impl AsRef<Path>, tokens: &FactorizedTokens) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tokens(tokens)?).map_err(|e| Error::io(path, e))
}

pub fn read_tokens(path: impl AsRef<Path>) -> Result<FactorizedTokens> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tokens(&bytes, path)
}
