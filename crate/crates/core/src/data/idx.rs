//! Big-endian IDX files (`train-images-idx3-ubyte` and friends).

use std::fs;
use std::path::Path;

use super::{io_err, DataError, IMAGE_DIM};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Other,
}

impl Split {
    fn from_count(n: usize) -> Self {
        match n {
            60_000 => Split::Train,
            10_000 => Split::Test,
            _ => Split::Other,
        }
    }
}

/// Raw MNIST: `N x 784` bytes row-major plus digit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistDataset {
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl MnistDataset {
    pub fn new(images: Vec<u8>, labels: Vec<u8>) -> Result<Self, DataError> {
        if images.len() != labels.len() * IMAGE_DIM {
            return Err(DataError::CountMismatch {
                images: images.len() / IMAGE_DIM,
                labels: labels.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
            return Err(DataError::InvalidLabel {
                path: "<memory>".into(),
                index,
                label,
            });
        }
        let split = Split::from_count(labels.len());
        Ok(MnistDataset {
            images,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, index: usize) -> &[u8] {
        &self.images[index * IMAGE_DIM..(index + 1) * IMAGE_DIM]
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

fn need(path: &str, bytes: &[u8], expected: usize) -> Result<(), DataError> {
    if bytes.len() < expected {
        return Err(DataError::TruncatedFile {
            path: path.to_owned(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DataError::TrailingBytes {
            path: path.to_owned(),
            extra: bytes.len() - expected,
        });
    }
    Ok(())
}

fn check_magic(path: &str, bytes: &[u8], expected: u32) -> Result<(), DataError> {
    if bytes.len() < 4 {
        return Err(DataError::TruncatedFile {
            path: path.to_owned(),
            expected: 4,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_owned(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Parses an image file; returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(path: &str, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), DataError> {
    check_magic(path, bytes, IMAGE_MAGIC)?;
    if bytes.len() < 16 {
        return Err(DataError::TruncatedFile {
            path: path.to_owned(),
            expected: 16,
            found: bytes.len(),
        });
    }
    let n = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    need(path, bytes, 16 + n * rows * cols)?;
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

pub fn parse_idx_labels(path: &str, bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    check_magic(path, bytes, LABEL_MAGIC)?;
    if bytes.len() < 8 {
        return Err(DataError::TruncatedFile {
            path: path.to_owned(),
            expected: 8,
            found: bytes.len(),
        });
    }
    let n = be_u32(bytes, 4) as usize;
    need(path, bytes, 8 + n)?;
    let labels = bytes[8..].to_vec();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(DataError::InvalidLabel {
            path: path.to_owned(),
            index,
            label,
        });
    }
    Ok(labels)
}

/// Loads an aligned image/label file pair. Nothing is returned on any error.
pub fn load_idx(path_images: &Path, path_labels: &Path) -> Result<MnistDataset, DataError> {
    let img_bytes = fs::read(path_images).map_err(|e| io_err(path_images, e))?;
    let lbl_bytes = fs::read(path_labels).map_err(|e| io_err(path_labels, e))?;
    let img_name = path_images.display().to_string();
    let (n, rows, cols, pixels) = parse_idx_images(&img_name, &img_bytes)?;
    if rows * cols != IMAGE_DIM {
        return Err(DataError::Manifest(format!(
            "{img_name}: expected 28x28 images, got {rows}x{cols}"
        )));
    }
    let labels = parse_idx_labels(&path_labels.display().to_string(), &lbl_bytes)?;
    if labels.len() != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    MnistDataset::new(pixels, labels)
}

/// Loads the canonical `train-*` or `t10k-*` pair from `dir`.
pub fn load_mnist(dir: &Path, split: Split) -> Result<MnistDataset, DataError> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test | Split::Other => "t10k",
    };
    load_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}
