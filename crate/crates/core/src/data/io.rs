//! `VVOL` volume files: magic `b"VVOL"`, `u32` version 1, three `u32`
//! extents, then little-endian `f32` values in row-major order.

use super::Volume;
use crate::error::{Error, Result};
use std::path::Path;

const MAGIC: &[u8; 4] = b"VVOL";
const VERSION: u32 = 1;
const HEADER: usize = 20;

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 * v.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for e in v.extents() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &x in v.values() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER {
        return Err(Error::Format(format!("volume file truncated: {} header bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("not a volume file (bad magic)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let version = word(1);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported volume version {version}")));
    }
    let extents = [word(2) as usize, word(3) as usize, word(4) as usize];
    let n = extents.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e));
    let payload = bytes.len() - HEADER;
    match n {
        Some(n) if n > 0 && n.checked_mul(4) == Some(payload) => {}
        _ => {
            return Err(Error::Format(format!(
                "header extents {extents:?} disagree with a payload of {payload} bytes"
            )))
        }
    }
    let values = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(extents, values)
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    std::fs::write(path, encode_volume(v))?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    decode_volume(&std::fs::read(path)?)
}
