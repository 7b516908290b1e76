//! Binary parameter files.
//!
//! Layout, all integers u32 little-endian: magic `VFW1`, version, record
//! count, then per record: name length, UTF-8 name, rank, each dim, and
//! `prod(dims)` f32 values.

use std::fs;
use std::path::Path;

use tensorcore::{ParamSet, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VFW1";
pub const VERSION: u32 = 1;

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + params.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    record: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptWeights { record: self.record, reason: format!("truncated while reading {what}") });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Decodes a whole file; any defect rejects it without a partial result.
pub fn decode(buf: &[u8]) -> Result<ParamSet> {
    if buf.len() < 4 || &buf[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader { buf, pos: 4, record: 0 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::WeightsVersion { found: version, expected: VERSION });
    }
    let count = r.u32("record count")? as usize;
    let mut params = ParamSet::new();
    for record in 0..count {
        r.record = record;
        let corrupt = |reason: String| Error::CorruptWeights { record, reason };
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| corrupt("name is not UTF-8".into()))?.to_string();
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("dims overflow".into()))?;
        let bytes = numel.checked_mul(4).ok_or_else(|| corrupt("dims overflow".into()))?;
        let data: Vec<f32> = r.take(bytes, "data")?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(dims, data).map_err(|e| corrupt(e.to_string()))?;
        if params.insert(name.clone(), t).is_some() {
            return Err(corrupt(format!("duplicate tensor name {name}")));
        }
    }
    if r.pos != buf.len() {
        return Err(Error::CorruptWeights { record: count, reason: format!("{} trailing bytes", buf.len() - r.pos) });
    }
    Ok(params)
}

pub fn save_weights(params: &ParamSet, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<ParamSet> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
