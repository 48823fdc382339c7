//! MNIST from IDX files, raw or gzip-compressed.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Unsigned-byte IDX tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn magic(&self) -> u32 {
        0x0800 | self.dims.len() as u32
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx("truncated header".into()))
}

fn inflate(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    GzDecoder::new(bytes).read_to_end(&mut out)?;
    Ok(out)
}

/// Parse an unsigned-byte IDX container, inflating gzip input first.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return parse_idx(&inflate(bytes)?);
    }
    let magic = be_u32(bytes, 0)?;
    if magic >> 8 != 0x08 || magic & 0xff == 0 {
        return Err(Error::Idx(format!("bad magic {magic:#010x}")));
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|k| be_u32(bytes, 4 + 4 * k).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Idx(format!("dimension product overflows: {dims:?}")))?;
    let start = 4 + 4 * rank;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < len {
        return Err(Error::Idx(format!(
            "truncated payload: expected {len} bytes, found {}",
            payload.len()
        )));
    }
    if payload.len() > len {
        return Err(Error::Idx(format!("{} trailing bytes after payload", payload.len() - len)));
    }
    Ok(IdxTensor {
        dims,
        data: payload.to_vec(),
    })
}

pub fn encode_idx(t: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * t.dims.len() + t.data.len());
    out.extend_from_slice(&t.magic().to_be_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&t.data);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Images kept as bytes; accessors scale to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistSet {
    pub split: Split,
    pixels: Vec<u8>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

impl MnistSet {
    pub fn from_tensors(split: Split, images: IdxTensor, labels: IdxTensor) -> Result<Self> {
        if images.dims.len() != 3 || labels.dims.len() != 1 {
            return Err(Error::Idx(format!(
                "expected rank-3 images and rank-1 labels, got {:?} and {:?}",
                images.dims, labels.dims
            )));
        }
        if images.dims[0] != labels.dims[0] {
            return Err(Error::Idx(format!(
                "{} images but {} labels",
                images.dims[0], labels.dims[0]
            )));
        }
        if let Some(&bad) = labels.data.iter().find(|&&l| l >= 10) {
            return Err(Error::Idx(format!("label {bad} out of range")));
        }
        Ok(Self {
            split,
            rows: images.dims[1],
            cols: images.dims[2],
            pixels: images.data,
            labels: labels.data,
        })
    }

    /// Read `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]` from `dir`.
    pub fn load(dir: &Path, split: Split) -> Result<Self> {
        let images = parse_idx(&std::fs::read(find(dir, split, "images-idx3-ubyte")?)?)?;
        let labels = parse_idx(&std::fs::read(find(dir, split, "labels-idx1-ubyte")?)?)?;
        Self::from_tensors(split, images, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn raw_image(&self, i: usize) -> &[u8] {
        let p = self.pixels_per_image();
        &self.pixels[i * p..(i + 1) * p]
    }

    /// Rows of the requested images, scaled by `1/255`.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Array2<T> {
        let p = self.pixels_per_image();
        let mut out = Array2::zeros((indices.len(), p));
        for (mut row, &i) in out.rows_mut().into_iter().zip(indices) {
            for (x, &b) in row.iter_mut().zip(self.raw_image(i)) {
                *x = T::lit(b as f64 / 255.0);
            }
        }
        out
    }

    /// The first `n` examples.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            split: self.split,
            pixels: self.pixels[..n * self.pixels_per_image()].to_vec(),
            labels: self.labels[..n].to_vec(),
            rows: self.rows,
            cols: self.cols,
        }
    }
}

fn find(dir: &Path, split: Split, kind: &str) -> Result<PathBuf> {
    let base = dir.join(format!("{}-{kind}", split.stem()));
    let gz = PathBuf::from(format!("{}.gz", base.display()));
    [base.clone(), gz]
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Idx(format!("missing {}", base.display())))
}

/// `SVPG_DATA_DIR`, if set.
pub fn data_dir_from_env() -> Option<PathBuf> {
    std::env::var_os("SVPG_DATA_DIR").map(PathBuf::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    fn labels_fixture() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 1, 0, 0, 0, 10];
        b.extend(0..10u8);
        b
    }

    #[test]
    fn parses_label_vector() {
        let t = parse_idx(&labels_fixture()).unwrap();
        assert_eq!(t.dims, vec![10]);
        assert_eq!(t.data, (0..10).collect::<Vec<u8>>());
    }

    #[test]
    fn rejects_bad_input() {
        let mut b = labels_fixture();
        b.pop();
        assert!(matches!(parse_idx(&b), Err(Error::Idx(m)) if m.contains("truncated payload")));
        assert!(parse_idx(&[0, 0, 9, 1, 0, 0, 0, 0]).is_err());
        assert!(parse_idx(&[0, 0, 8]).is_err());
        let overflow = [0, 0, 8, 3, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255];
        assert!(parse_idx(&overflow).is_err());
    }

    #[test]
    fn gzip_is_transparent() {
        let raw = labels_fixture();
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(parse_idx(&gz).unwrap(), parse_idx(&raw).unwrap());
    }

    #[test]
    fn set_scales_and_checks_labels() {
        let images = IdxTensor {
            dims: vec![2, 1, 2],
            data: vec![0, 255, 128, 64],
        };
        let labels = IdxTensor {
            dims: vec![2],
            data: vec![3, 7],
        };
        let set = MnistSet::from_tensors(Split::Test, images.clone(), labels).unwrap();
        let x = set.batch::<f64>(&[1, 0]);
        assert!((x[[0, 0]] - 128.0 / 255.0).abs() < 1e-15);
        assert_eq!(x[[1, 1]], 1.0);
        let bad = IdxTensor {
            dims: vec![2],
            data: vec![3, 10],
        };
        assert!(MnistSet::from_tensors(Split::Test, images, bad).is_err());
    }
}
