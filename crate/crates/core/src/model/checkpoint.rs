//! `FPEC` checkpoint files.
//!
//! Layout (little-endian): `b"FPEC"`, `u32` version, `u32` header length,
//! JSON header `{"model": ModelConfig, "seed": u64}`, `u32` block count, then
//! per parameter: `u32` name length, UTF-8 name, `u32` rank, `u32` extents,
//! `f64` values row-major.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, Transformer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FPEC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub seed: u64,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn to_bytes(model: &Transformer, seed: u64) -> Vec<u8> {
    let header = serde_json::to_vec(&CheckpointHeader {
        model: model.cfg.clone(),
        seed,
    })
    .expect("config serializes");
    let named = model.params.named();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize);
    put_u32(&mut out, header.len());
    out.extend_from_slice(&header);
    put_u32(&mut out, named.len());
    for (name, t) in named {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len());
        for &e in t.shape() {
            put_u32(&mut out, e);
        }
        for v in t.values().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::data("checkpoint", "truncated file"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Transformer, u64)> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::data("checkpoint", "not an FPEC checkpoint"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::data("checkpoint", format!("unsupported version {version}")));
    }
    let len = r.u32()?;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::data("checkpoint header", e.to_string()))?;
    let n_blocks = r.u32()?;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name_len = r.u32()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::data("checkpoint", "parameter name is not UTF-8"))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let values = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        blocks.push((name, shape, values));
    }
    if r.at != bytes.len() {
        return Err(Error::data("checkpoint", "trailing bytes after the last block"));
    }
    // Initialization only fixes the parameter layout; every value is then
    // overwritten from the file.
    let params = ModelParams::init(&header.model, &mut ChaCha8Rng::seed_from_u64(0))?;
    params.load_named(&blocks)?;
    Ok((
        Transformer {
            cfg: header.model,
            params,
        },
        header.seed,
    ))
}

pub fn save(path: &Path, model: &Transformer, seed: u64) -> Result<()> {
    fs::write(path, to_bytes(model, seed)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Transformer, u64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
