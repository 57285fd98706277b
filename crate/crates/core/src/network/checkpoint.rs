//! Checkpoint container.
//!
//! All integers little-endian:
//!
//! ```text
//! magic      8 bytes  "HNXCKPT1"
//! config     u32 length + UTF-8 TOML of the NetworkConfig
//! count      u32 number of tensors
//! per tensor:
//!   name       u32 length + UTF-8
//!   trainable  u8 (0 or 1)
//!   rank       u32
//!   dims       rank x u64
//!   values     prod(dims) x f64
//! ```

use std::path::Path;

use super::params::{ParamStore, Tensor};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HNXCKPT1";

pub fn encode_checkpoint<T: Real>(config: &NetworkConfig, params: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let cfg = config.to_toml();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for t in params.tensors() {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.trainable as u8);
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&Real::to_f64(*v).to_le_bytes());
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
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Length {
            path: self.path.to_path_buf(),
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.format("string is not UTF-8"))
    }

    fn format(&self, msg: &str) -> Error {
        Error::Format { path: self.path.to_path_buf(), msg: msg.to_string() }
    }
}

/// `path` only labels errors.
pub fn decode_checkpoint<T: Real>(bytes: &[u8], path: &Path) -> Result<(NetworkConfig, ParamStore<T>)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8).ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(r.format("not a checkpoint (bad magic)"));
    }
    let cfg_text = r.string()?;
    let config = NetworkConfig::from_toml(&cfg_text)?;
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = r.string()?;
        let trainable = match r.take(1)?[0] {
            0 => false,
            1 => true,
            _ => return Err(r.format("bad trainable flag")),
        };
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.format("tensor too large"))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| r.format("tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap()))).collect();
        params.insert(Tensor::new(name, shape, data, trainable)?)?;
    }
    if r.pos != bytes.len() {
        return Err(r.format("trailing bytes after the last tensor"));
    }
    Ok((config, params))
}

pub fn save_checkpoint<T: Real>(path: &Path, config: &NetworkConfig, params: &ParamStore<T>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(config, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(NetworkConfig, ParamStore<T>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Network;
    use rand::SeedableRng;

    #[test]
    fn round_trip_and_errors() {
        let cfg = NetworkConfig { input_size: 8, filter_size: 5, ..crate::network::tests::small_config() };
        let net = Network::<f64>::new(&cfg).unwrap();
        let params = net.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
        let bytes = encode_checkpoint(&cfg, &params);
        let p = Path::new("mem");
        let (cfg2, params2) = decode_checkpoint::<f64>(&bytes, p).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(params2.tensors().len(), params.tensors().len());
        for (a, b) in params.tensors().iter().zip(params2.tensors()) {
            assert_eq!((&a.name, &a.shape, &a.data, a.trainable), (&b.name, &b.shape, &b.data, b.trainable));
        }
        assert_eq!(encode_checkpoint(&cfg2, &params2), bytes);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint::<f64>(&bad, p), Err(Error::Format { .. })));
        assert!(matches!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 3], p), Err(Error::Length { .. })));
    }
}
