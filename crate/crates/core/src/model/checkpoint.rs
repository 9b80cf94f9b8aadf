//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "NETMAECK"
//! version  u32
//! seed     u64
//! config   u32 length + UTF-8 key = value text
//! count    u32
//! count × { u32 name length, name, u32 rank, rank × u64 dims,
//!           u64 byte length, f64 data }
//! ```

use std::fs;
use std::path::Path;

use netmae_autograd::Tensor;

use super::config::ModelConfig;
use super::params::ModelState;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NETMAECK";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_checkpoint(state: &ModelState) -> Vec<u8> {
    encode_with_version(state, FORMAT_VERSION)
}

fn encode_with_version(state: &ModelState, version: u32) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&state.seed.to_le_bytes());
    let cfg = state.config.to_kv();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&(state.params().len() as u32).to_le_bytes());
    for (name, t) in state.names().iter().zip(state.params()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&((t.len() * 8) as u64).to_le_bytes());
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
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
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!(
                "truncated checkpoint: {what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn text(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a netmae checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    let seed = r.u64("seed")?;
    let config = ModelConfig::from_kv(&r.text("config block")?)?;
    let count = r.u32("parameter count")? as usize;
    let mut named = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = r.text("parameter name")?;
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Checkpoint(format!("{name}: corrupt rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let len = r.u64("byte length")?;
        let expected = shape.iter().try_fold(8u64, |acc, &d| acc.checked_mul(d as u64));
        if expected != Some(len) {
            return Err(Error::Checkpoint(format!(
                "{name}: corrupt length field {len} for shape {shape:?}"
            )));
        }
        let raw = r.take(len as usize, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let Some(i) = t.first_non_finite() {
            return Err(Error::Checkpoint(format!("{name}: non-finite value at {i}")));
        }
        named.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last parameter",
            bytes.len() - r.pos
        )));
    }
    ModelState::from_parts(config, seed, named)
}

pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelState {
        let c = ModelConfig {
            d_emb: 8,
            heads: 2,
            encoder_depth: 1,
            decoder_depth: 1,
            d_mlp: 16,
            token_dim: 4,
            max_tokens: 6,
            classifier_hidden: 4,
            ..ModelConfig::default()
        };
        ModelState::init(c, 3).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = small();
        let back = decode_checkpoint(&encode_checkpoint(&s)).unwrap();
        assert_eq!(back.seed, s.seed);
        for (a, b) in s.params().iter().zip(back.params()) {
            let ab: Vec<u64> = a.data().iter().map(|x| x.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(back, s);
    }

    #[test]
    fn version_mismatch_is_reported() {
        let bytes = encode_with_version(&small(), FORMAT_VERSION + 1);
        let err = decode_checkpoint(&bytes).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn corrupted_length_and_truncation() {
        let s = small();
        let bytes = encode_checkpoint(&s);
        // The first blob's byte length follows its name and shape.
        let cfg_len = s.config.to_kv().len();
        let name_len = s.names()[0].len();
        let off = 8 + 4 + 8 + 4 + cfg_len + 4 + 4 + name_len + 4 + 2 * 8;
        let mut bad = bytes.clone();
        bad[off] ^= 0x10;
        let err = decode_checkpoint(&bad).unwrap_err().to_string();
        assert!(err.contains("corrupt length"), "{err}");

        let err = decode_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }
}
