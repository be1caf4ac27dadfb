//! Self-describing checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"SEEDCKPT" | u32 version | u64 json_len | ModelConfig JSON
//! u32 n_params
//! repeated: u32 name_len | name (utf-8) | u32 ndim | u64 dims[ndim] | f64 data[prod(dims)]
//! ```

use std::path::Path;

use crate::error::{Result, SeedError};
use crate::model::{ModelConfig, SeedModel};
use crate::numeric::Tensor;

pub const MAGIC: &[u8; 8] = b"SEEDCKPT";
pub const VERSION: u32 = 1;
const MAX_NDIM: u32 = 8;
const MAX_NAME: u32 = 4096;

/// Decoded checkpoint contents, before a model is rebuilt from them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<(String, Tensor)>,
}

pub fn encode(model: &SeedModel) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(model.config())?;
    let mut out = Vec::with_capacity(64 + json.len() + 8 * model.count_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.store().len() as u32).to_le_bytes());
    for (name, t) in model.store().iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(SeedError::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Parses checkpoint bytes without building a model.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(SeedError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(SeedError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let json_len = r.u64("config length")?;
    if json_len > r.remaining() as u64 {
        return Err(SeedError::Checkpoint(format!("config length {json_len} exceeds file size")));
    }
    let json = r.take(json_len as usize, "config")?;
    let config: ModelConfig =
        serde_json::from_slice(json).map_err(|e| SeedError::Checkpoint(format!("bad config: {e}")))?;

    let count = r.u32("parameter count")?;
    let mut params = Vec::new();
    for i in 0..count {
        let name_len = r.u32("name length")?;
        if name_len > MAX_NAME {
            return Err(SeedError::Checkpoint(format!("parameter {i}: name length {name_len}")));
        }
        let name = std::str::from_utf8(r.take(name_len as usize, "name")?)
            .map_err(|_| SeedError::Checkpoint(format!("parameter {i}: name is not utf-8")))?
            .to_string();
        let ndim = r.u32("ndim")?;
        if ndim > MAX_NDIM {
            return Err(SeedError::Checkpoint(format!("{name}: {ndim} dimensions")));
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        let mut numel: u64 = 1;
        for _ in 0..ndim {
            let d = r.u64("dimension")?;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| SeedError::Checkpoint(format!("{name}: shape overflows")))?;
            shape.push(d);
        }
        let bytes_needed = numel
            .checked_mul(8)
            .filter(|&b| b <= r.remaining() as u64)
            .ok_or_else(|| SeedError::Checkpoint(format!("{name}: data runs past end of file")))?;
        let raw = r.take(bytes_needed as usize, "data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let shape = shape.into_iter().map(|d| d as usize).collect();
        let tensor = Tensor::new(shape, data).map_err(|e| SeedError::Checkpoint(e.to_string()))?;
        params.push((name, tensor));
    }
    if r.remaining() != 0 {
        return Err(SeedError::Checkpoint(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Checkpoint { config, params })
}

/// Parses and rebuilds a model, checking every parameter name and shape.
pub fn load_bytes(bytes: &[u8]) -> Result<SeedModel> {
    let ckpt = decode(bytes)?;
    SeedModel::from_parts(ckpt.config, ckpt.params)
}

pub fn save(model: &SeedModel, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    std::fs::write(path, bytes).map_err(|e| SeedError::io(path, e))
}

pub fn load(path: &Path) -> Result<SeedModel> {
    let bytes = std::fs::read(path).map_err(|e| SeedError::io(path, e))?;
    load_bytes(&bytes)
}
