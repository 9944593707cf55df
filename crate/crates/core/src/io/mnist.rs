//! IDX reader for the MNIST distribution files.
//!
//! Layout: big-endian `u32` magic (`0x00000803` for `u8` rank-3 image data,
//! `0x00000801` for `u8` rank-1 labels), one big-endian `u32` per dimension,
//! then the unsigned-byte payload. Header sizes are checked against the real
//! file length before anything is allocated from them.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images scaled to `[0, 1]` and their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistSet {
    pub rows: usize,
    pub cols: usize,
    pixels: Vec<f32>,
    labels: Vec<u8>,
}

impl MnistSet {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        if pixels.len() != labels.len() * rows * cols {
            return Err(Error::Shape(format!(
                "{} labels need {} pixels, got {}",
                labels.len(),
                labels.len() * rows * cols,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("pixels must lie in [0, 1]".into()));
        }
        Ok(MnistSet {
            rows,
            cols,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    /// Flattened pixels of image `i`.
    pub fn pixels(&self, i: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Image `i` as a `[1, rows, cols]` tensor.
    pub fn image(&self, i: usize) -> Tensor {
        Tensor::new(vec![1, self.rows, self.cols], self.pixels(i).to_vec())
            .expect("image size fixed at construction")
    }

    /// The first `n` samples (all of them if `n` exceeds the set).
    pub fn head(&self, n: usize) -> MnistSet {
        let n = n.min(self.len());
        let px = self.rows * self.cols;
        MnistSet {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..n * px].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Samples at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> MnistSet {
        let mut pixels = Vec::with_capacity(indices.len() * self.rows * self.cols);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.pixels(i));
            labels.push(self.labels[i]);
        }
        MnistSet {
            rows: self.rows,
            cols: self.cols,
            pixels,
            labels,
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Parses an IDX header with `dims` dimensions and checks the payload length.
/// Returns the dimension sizes.
fn parse_header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>> {
    let header_len = 4 + 4 * dims;
    if bytes.len() < header_len {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected: header_len as u64,
            actual: bytes.len() as u64,
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::format(
            path,
            format!("bad IDX magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    let sizes: Vec<usize> = (0..dims)
        .map(|d| be_u32(bytes, 4 + 4 * d) as usize)
        .collect();
    let payload = sizes
        .iter()
        .try_fold(1u64, |acc, s| acc.checked_mul(*s as u64))
        .ok_or_else(|| Error::format(path, "IDX dimensions overflow"))?;
    let expected = header_len as u64 + payload;
    if bytes.len() as u64 != expected {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(sizes)
}

/// Reads an IDX image file: `(count, rows, cols, raw bytes)`.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<(usize, usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let mut bytes = read_file(path)?;
    let dims = parse_header(path, &bytes, IMAGES_MAGIC, 3)?;
    bytes.drain(..16);
    Ok((dims[0], dims[1], dims[2], bytes))
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let mut bytes = read_file(path)?;
    parse_header(path, &bytes, LABELS_MAGIC, 1)?;
    bytes.drain(..8);
    Ok(bytes)
}

/// Loads an image/label file pair, scaling pixels by 1/255.
pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<MnistSet> {
    let (count, rows, cols, raw) = read_idx_images(&images)?;
    let labels_path = labels.as_ref();
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != count {
        return Err(Error::format(
            labels_path,
            format!("{} labels for {count} images", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|l| **l > 9) {
        return Err(Error::format(
            labels_path,
            format!("label {bad} is not a digit"),
        ));
    }
    let pixels = raw.into_iter().map(|b| b as f32 / 255.0).collect();
    MnistSet::new(rows, cols, pixels, labels)
}

pub fn write_idx_images(
    path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    pixels: &[u8],
) -> Result<()> {
    let path = path.as_ref();
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Standard file names inside an MNIST directory.
#[derive(Debug, Clone)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        MnistPaths {
            train_images: d.join("train-images-idx3-ubyte"),
            train_labels: d.join("train-labels-idx1-ubyte"),
            test_images: d.join("t10k-images-idx3-ubyte"),
            test_labels: d.join("t10k-labels-idx1-ubyte"),
        }
    }
}
