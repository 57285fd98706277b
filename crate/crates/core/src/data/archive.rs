//! Split archive, all integers little-endian:
//!
//! ```text
//! magic    8 bytes "HNXSPLIT"
//! version  u32 (1)
//! variant  u8  (0 mnist-rot-test, 1 swn-gcn-mnist, 2 rot-mnist)
//! split    u8  (0 train, 1 valid, 2 test)
//! reserved u16 (0)
//! seed     u64
//! count    u64
//! height   u32
//! width    u32
//! angles   count x f64 (degrees)
//! labels   count x u8
//! images   count x height x width x f32, row-major, in [0, 1]
//! ```

use std::path::Path;

use super::dataset::{RotatedDataset, Split};
use crate::config::Variant;
use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"HNXSPLIT";
const VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 4 + 8 + 8 + 4 + 4;

pub fn encode_split(d: &RotatedDataset) -> Vec<u8> {
    let n = d.len();
    let mut out = Vec::with_capacity(HEADER + n * 9 + d.images.len() * 4);
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(d.variant.code());
    out.push(d.split.code());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&d.seed.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d.height as u32).to_le_bytes());
    out.extend_from_slice(&(d.width as u32).to_le_bytes());
    for a in &d.angles {
        out.extend_from_slice(&a.to_le_bytes());
    }
    out.extend_from_slice(&d.labels);
    for v in &d.images {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// `path` only labels errors.
pub fn decode_split(bytes: &[u8], path: &Path) -> Result<RotatedDataset> {
    let format = |msg: &str| Error::Format { path: path.to_path_buf(), msg: msg.to_string() };
    if bytes.len() < HEADER {
        if bytes.len() >= 8 && &bytes[..8] != ARCHIVE_MAGIC {
            return Err(format("not a split archive (bad magic)"));
        }
        return Err(Error::Length { path: path.to_path_buf(), expected: HEADER, found: bytes.len() });
    }
    if &bytes[..8] != ARCHIVE_MAGIC {
        return Err(format("not a split archive (bad magic)"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if u32_at(8) != VERSION {
        return Err(format("unsupported archive version"));
    }
    let variant = Variant::from_code(bytes[12]).ok_or_else(|| format("unknown variant code"))?;
    let split = Split::from_code(bytes[13]).ok_or_else(|| format("unknown split code"))?;
    let seed = u64_at(16);
    let n = u64_at(24) as usize;
    let (h, w) = (u32_at(32) as usize, u32_at(36) as usize);
    let expected = n
        .checked_mul(9 + 4 * h * w)
        .and_then(|b| b.checked_add(HEADER))
        .ok_or_else(|| format("sample count overflows"))?;
    if bytes.len() != expected {
        return Err(Error::Length { path: path.to_path_buf(), expected, found: bytes.len() });
    }
    let mut o = HEADER;
    let angles = bytes[o..o + 8 * n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    o += 8 * n;
    let labels = bytes[o..o + n].to_vec();
    o += n;
    let images = bytes[o..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    RotatedDataset::new(variant, split, seed, h, w, images, labels, angles)
}

pub fn archive_name(split: Split) -> String {
    format!("{}.hnxsplit", split.as_str())
}

pub fn write_split(path: &Path, d: &RotatedDataset) -> Result<Vec<u8>> {
    let bytes = encode_split(d);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

pub fn read_split(path: &Path) -> Result<RotatedDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_split(&bytes, path)
}
