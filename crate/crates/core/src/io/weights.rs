//! Binary weights format, little-endian throughout:
//!
//! ```text
//! "ESDW" | version u32 | count u32 |
//!   count × (name_len u32 | name utf-8 | dtype u8 (0 = f32) | ndim u8 | dims u32×ndim | values)
//! | crc32 of everything before it
//! ```

use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"ESDW";
pub const WEIGHTS_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

pub fn encode_weights<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Result<Vec<u8>> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(entries.len()).map_err(|_| Error::Format("too many entries".into()))?.to_le_bytes());
    let mut seen = std::collections::HashSet::new();
    for (name, t) in entries {
        if !seen.insert(name) {
            return Err(Error::Format(format!("duplicate entry {name}")));
        }
        let ndim = u8::try_from(t.shape().len()).map_err(|_| Error::Format(format!("{name} has too many dims")))?;
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(ndim);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else { return Err(Error::Format(format!("unexpected end of data at byte {}", self.pos))) };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses a weights file image. The checksum is verified before anything
/// else, so truncated or corrupted files fail with [`Error::Checksum`].
pub fn decode_weights(bytes: &[u8]) -> Result<IndexMap<String, Tensor<f32>>> {
    let split = bytes.len().saturating_sub(4);
    let (body, trailer) = bytes.split_at(split);
    let stored = if trailer.len() == 4 { u32::from_le_bytes(trailer.try_into().expect("4 bytes")) } else { 0 };
    let computed = crc32fast::hash(body);
    if trailer.len() != 4 || stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::Format("not a weights file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!("unsupported weights version {version}")));
    }
    let count = r.u32()?;
    let mut out = IndexMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("entry name is not UTF-8".into()))?.to_string();
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("entry {name} has unsupported dtype {dtype}")));
        }
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let raw = numel.and_then(|n| n.checked_mul(4)).map(|n| r.take(n)).transpose()?;
        let Some(raw) = raw else { return Err(Error::Format(format!("entry {name} is too large"))) };
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let tensor = Tensor::new(&shape, data)?;
        if out.insert(name.clone(), tensor).is_some() {
            return Err(Error::Format(format!("duplicate entry {name}")));
        }
    }
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last entry", body.len() - r.pos)));
    }
    Ok(out)
}

pub fn write_weights<'a>(path: &Path, entries: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Result<()> {
    super::atomic_write(path, &encode_weights(entries)?)
}

pub fn read_weights(path: &Path) -> Result<IndexMap<String, Tensor<f32>>> {
    decode_weights(&std::fs::read(path)?)
}

pub fn save_model(path: &Path, model: &ModelParams<f32>) -> Result<()> {
    write_weights(path, model.iter())
}

/// Loads weights that must match `config`'s parameter set exactly.
pub fn load_model(path: &Path, config: ModelConfig) -> Result<ModelParams<f32>> {
    ModelParams::from_tensors(config, read_weights(path)?)
}
