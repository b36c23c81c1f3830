//! IDX files as used by MNIST: a big-endian magic number, big-endian u32
//! dimensions, then unsigned bytes.

use std::path::Path;

use ndarray::Array4;

use super::{check_levels, quantize_byte, ImageDataset};
use crate::error::{DataError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(DataError::Truncated { needed: at + 4, found: bytes.len() })
}

/// Header dimensions and the payload that follows them.
fn parse(bytes: &[u8], magic: u32, ndims: usize) -> Result<(Vec<usize>, &[u8]), DataError> {
    let found = read_u32(bytes, 0)?;
    if found != magic {
        return Err(DataError::BadMagic { expected: magic, found });
    }
    let dims = (0..ndims).map(|i| read_u32(bytes, 4 + 4 * i).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
    let start = 4 + 4 * ndims;
    let needed = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_add(start))
        .ok_or_else(|| DataError::DimMismatch(format!("header dimensions {dims:?} overflow")))?;
    if bytes.len() < needed {
        return Err(DataError::Truncated { needed, found: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(DataError::DimMismatch(format!(
            "header dimensions {dims:?} account for {needed} bytes, file has {}",
            bytes.len()
        )));
    }
    Ok((dims, &bytes[start..]))
}

/// Raw image bytes, shaped `count × 1 × rows × cols`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Array4<u8>, DataError> {
    let (d, data) = parse(bytes, IDX_IMAGES_MAGIC, 3)?;
    Ok(Array4::from_shape_vec((d[0], 1, d[1], d[2]), data.to_vec()).expect("length checked"))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let (_, data) = parse(bytes, IDX_LABELS_MAGIC, 1)?;
    Ok(data.to_vec())
}

pub fn encode_idx_images(images: &Array4<u8>) -> Result<Vec<u8>, DataError> {
    let (n, c, h, w) = images.dim();
    if c != 1 {
        return Err(DataError::DimMismatch(format!("IDX images have one channel, got {c}")));
    }
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.iter());
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|e| DataError::io(path, e))
}

/// Loads an IDX image file and optional label file, mapping bytes onto
/// `0..=n_levels` (identity for 255, threshold at 128 for 1).
pub fn load_idx(images: &Path, labels: Option<&Path>, n_levels: u32) -> Result<ImageDataset> {
    check_levels(n_levels)?;
    let mut samples = parse_idx_images(&read(images)?)?;
    if n_levels != 255 {
        samples.mapv_inplace(|p| quantize_byte(p, n_levels));
    }
    let labels = labels.map(|p| read(p).and_then(|b| parse_idx_labels(&b))).transpose()?;
    ImageDataset::new(samples, labels, n_levels)
}
