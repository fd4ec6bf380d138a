//! Binary parameter container.
//!
//! Layout (all integers little-endian `u32`):
//! `b"VCKP"`, version, config length, config text (`key = value` lines),
//! tensor count, then per tensor: name length, UTF-8 name, rank, extents,
//! and the `f32` payload.

use super::{ArchitectureConfig, VaeParameters};
use crate::error::{Error, Result};
use crate::kv::KvDocument;
use crate::tensor::Tensor;
use std::path::Path;

const MAGIC: &[u8; 4] = b"VCKP";
const VERSION: u32 = 1;

pub fn encode_checkpoint(params: &VaeParameters) -> Vec<u8> {
    let config = params.arch().to_kv().render();
    let mut out = Vec::with_capacity(16 + config.len() + 4 * params.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| Error::Format(format!("{what} is not valid UTF-8")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<VaeParameters> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let config = r.string("architecture config")?;
    let arch = ArchitectureConfig::from_kv(&KvDocument::parse(&config)?)?;
    let count = r.u32("tensor count")? as usize;
    let mut named = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let rank = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("tensor extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4, &format!("payload of `{name}`"))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        named.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after last tensor", bytes.len() - r.pos)));
    }
    VaeParameters::from_named(&arch, named)
}

pub fn write_checkpoint(path: &Path, params: &VaeParameters) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<VaeParameters> {
    decode_checkpoint(&std::fs::read(path)?)
}
