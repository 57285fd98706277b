//! IDX container: big-endian magic `0x000008TT` with `TT` the rank (only
//! unsigned bytes are accepted), one big-endian `u32` per dimension, then
//! the row-major payload. Files ending in `.gz` are gunzipped first.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IDX_IMAGES: u32 = 0x0000_0803;
pub const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxTensor {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an in-memory IDX file; `path` only labels errors.
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxTensor> {
    let format = |msg: String| Error::Format { path: path.to_path_buf(), msg };
    if bytes.len() < 4 {
        return Err(Error::Length { path: path.to_path_buf(), expected: 4, found: bytes.len() });
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if magic != IDX_IMAGES && magic != IDX_LABELS {
        return Err(format(format!("unsupported magic 0x{magic:08x}")));
    }
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Length { path: path.to_path_buf(), expected: header, found: bytes.len() });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let payload = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| format("dimension overflow".into()))?;
    let expected = header + payload;
    if bytes.len() != expected {
        return Err(Error::Length { path: path.to_path_buf(), expected, found: bytes.len() });
    }
    Ok(IdxTensor { magic, dims, data: bytes[header..].to_vec() })
}

pub fn read_idx(path: &Path) -> Result<IdxTensor> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(|e| Error::io(path, e))?;
        out
    } else {
        raw
    };
    parse_idx(&bytes, path)
}

/// Serializes an unsigned-byte tensor of rank 1 or 3.
pub fn encode_idx(dims: &[usize], data: &[u8]) -> Result<Vec<u8>> {
    let magic = match dims.len() {
        1 => IDX_LABELS,
        3 => IDX_IMAGES,
        r => return Err(Error::Shape(format!("IDX rank {r} not supported"))),
    };
    if dims.iter().product::<usize>() != data.len() {
        return Err(Error::Shape("IDX payload does not match its dimensions".into()));
    }
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    Ok(out)
}

/// `dir/name`, or `dir/name.gz` when only the compressed file exists.
pub fn locate(dir: &Path, name: &str) -> PathBuf {
    let plain = dir.join(name);
    let gz = dir.join(format!("{name}.gz"));
    if !plain.exists() && gz.exists() {
        gz
    } else {
        plain
    }
}

/// Images as `count x 28 x 28` bytes plus labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MnistPart {
    pub height: usize,
    pub width: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl MnistPart {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self, i: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.images[i * n..(i + 1) * n]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mnist {
    pub train: MnistPart,
    pub test: MnistPart,
}

pub const MNIST_FILES: [&str; 4] =
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];

fn load_part(dir: &Path, images: &str, labels: &str) -> Result<MnistPart> {
    let ip = locate(dir, images);
    let lp = locate(dir, labels);
    let im = read_idx(&ip)?;
    let lb = read_idx(&lp)?;
    if im.magic != IDX_IMAGES {
        return Err(Error::Format { path: ip, msg: "expected an image tensor (0x00000803)".into() });
    }
    if lb.magic != IDX_LABELS {
        return Err(Error::Format { path: lp, msg: "expected a label vector (0x00000801)".into() });
    }
    if im.dims[0] != lb.dims[0] {
        return Err(Error::Data(format!(
            "{} has {} images but {} has {} labels",
            ip.display(),
            im.dims[0],
            lp.display(),
            lb.dims[0]
        )));
    }
    Ok(MnistPart { height: im.dims[1], width: im.dims[2], images: im.data, labels: lb.data })
}

/// Reads the four standard MNIST files (plain or `.gz`) from `dir`.
pub fn load_mnist(dir: &Path) -> Result<Mnist> {
    let train = load_part(dir, MNIST_FILES[0], MNIST_FILES[1])?;
    let test = load_part(dir, MNIST_FILES[2], MNIST_FILES[3])?;
    if (train.height, train.width) != (test.height, test.width) {
        return Err(Error::Data("train and test images differ in size".into()));
    }
    Ok(Mnist { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use std::io::Write;

    #[test]
    fn parses_images_and_labels() {
        let p = Path::new("x");
        let img = encode_idx(&[2, 2, 3], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]).unwrap();
        assert_eq!(&img[..4], &[0, 0, 8, 3]);
        let t = parse_idx(&img, p).unwrap();
        assert_eq!((t.magic, t.dims.clone()), (IDX_IMAGES, vec![2, 2, 3]));
        assert_eq!(t.data[11], 11);
        let lab = parse_idx(&encode_idx(&[3], &[7, 0, 9]).unwrap(), p).unwrap();
        assert_eq!((lab.magic, lab.dims, lab.data), (IDX_LABELS, vec![3], vec![7, 0, 9]));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let p = Path::new("bad");
        let mut b = encode_idx(&[3], &[1, 2, 3]).unwrap();
        b[3] = 0x99;
        assert!(matches!(parse_idx(&b, p), Err(Error::Format { .. })));
        let b = encode_idx(&[1, 2, 2], &[1, 2, 3, 4]).unwrap();
        assert!(matches!(parse_idx(&b[..b.len() - 1], p), Err(Error::Length { expected: 20, found: 19, .. })));
        assert!(matches!(parse_idx(&b[..9], p), Err(Error::Length { .. })));
        assert!(matches!(parse_idx(&[0, 0], p), Err(Error::Length { .. })));
    }

    #[test]
    fn reads_gzip_and_locates_files() {
        let dir = tempfile::tempdir().unwrap();
        let raw = encode_idx(&[2], &[4, 5]).unwrap();
        let mut gz = GzEncoder::new(Vec::new(), flate2::Compression::default());
        gz.write_all(&raw).unwrap();
        std::fs::write(dir.path().join("labels.gz"), gz.finish().unwrap()).unwrap();
        let path = locate(dir.path(), "labels");
        assert!(path.ends_with("labels.gz"));
        assert_eq!(read_idx(&path).unwrap().data, vec![4, 5]);
        assert!(matches!(read_idx(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
