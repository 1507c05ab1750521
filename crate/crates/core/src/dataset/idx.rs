//! IDX container: big-endian `u32` magic, big-endian `u32` dimension sizes,
//! then unsigned bytes in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use super::{DatasetError, RawDataset};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Header plus payload of one IDX file, bytes left unscaled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Option<u32> {
    let word: [u8; 4] = bytes.get(offset..offset + 4)?.try_into().ok()?;
    Some(u32::from_be_bytes(word))
}

/// Parses an IDX byte buffer whose magic must equal `expected_magic`.
/// The low byte of the magic is the number of dimensions.
pub fn parse_idx(bytes: &[u8], expected_magic: u32, path: &Path) -> Result<IdxTensor, DatasetError> {
    let truncated = |needed: usize| DatasetError::Truncated {
        path: path.to_path_buf(),
        expected: needed,
        actual: bytes.len(),
    };
    let magic = read_be_u32(bytes, 0).ok_or_else(|| truncated(4))?;
    if magic != expected_magic {
        return Err(DatasetError::BadMagic {
            path: path.to_path_buf(),
            expected: expected_magic,
            found: magic,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let header_len = 4 + 4 * ndim;
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        let size = read_be_u32(bytes, 4 + 4 * d).ok_or_else(|| truncated(header_len))?;
        dims.push(size as usize);
    }
    let payload: usize = dims.iter().product();
    let needed = header_len + payload;
    if bytes.len() < needed {
        return Err(truncated(needed));
    }
    Ok(IdxTensor {
        dims,
        data: bytes[header_len..needed].to_vec(),
    })
}

/// Serializes a tensor back to IDX bytes. Used for fixtures and tests.
pub fn encode_idx(magic: u32, dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Builds a dataset from already-read image and label buffers.
pub fn decode_pair(
    image_bytes: &[u8],
    images_path: &Path,
    label_bytes: &[u8],
    labels_path: &Path,
) -> Result<RawDataset, DatasetError> {
    let images = parse_idx(image_bytes, IMAGES_MAGIC, images_path)?;
    let labels = parse_idx(label_bytes, LABELS_MAGIC, labels_path)?;
    let count = images.dims[0];
    if count != labels.dims[0] {
        return Err(DatasetError::CountMismatch {
            images: count,
            labels: labels.dims[0],
        });
    }
    let dim: usize = images.dims[1..].iter().product();
    let features = images.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = labels.data.iter().map(|&l| usize::from(l)).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    RawDataset::new(features, dim, labels, num_classes)
}

/// Loads an image file (magic 0x803) and a label file (magic 0x801).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<RawDataset, DatasetError> {
    let images_path: PathBuf = images_path.as_ref().to_path_buf();
    let labels_path: PathBuf = labels_path.as_ref().to_path_buf();
    let image_bytes = read_file(&images_path)?;
    let label_bytes = read_file(&labels_path)?;
    decode_pair(&image_bytes, &images_path, &label_bytes, &labels_path)
}
