//! Readers for the IDX container used by the MNIST distribution.
//!
//! Layout: a big-endian `u32` magic (`0x00000803` for u8 images with three
//! dims, `0x00000801` for u8 labels with one dim), one big-endian `u32` per
//! dimension, then the raw bytes. The payload must be exactly the product
//! of the dims.

use std::fs;
use std::path::Path;

use kspc_core::{DatasetMatrix, Matrix};

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

impl IdxHeader {
    fn byte_len(&self) -> usize {
        4 + 4 * self.dims.len()
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses the header, checks the magic and that the payload length matches.
pub fn parse(bytes: &[u8], expected_magic: u32) -> Result<(IdxHeader, &[u8])> {
    let magic =
        read_u32(bytes, 0).ok_or_else(|| Error::format("IDX file shorter than its magic"))?;
    if magic != expected_magic {
        return Err(Error::format(format!(
            "bad IDX magic {magic:#010x}, expected {expected_magic:#010x}"
        )));
    }
    let ndims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndims);
    for i in 0..ndims {
        let d = read_u32(bytes, 4 + 4 * i).ok_or_else(|| Error::format("IDX header truncated"))?;
        dims.push(d);
    }
    let header = IdxHeader { magic, dims };
    let expected = header
        .dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::format("IDX dimensions overflow"))?;
    let payload = &bytes[header.byte_len()..];
    if payload.len() != expected {
        return Err(Error::format(format!(
            "IDX payload has {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    Ok((header, payload))
}

/// Images as columns scaled to `[0, 1]` by `/255`, flattened row-major.
pub fn decode_images(bytes: &[u8]) -> Result<DatasetMatrix> {
    let (header, payload) = parse(bytes, IMAGES_MAGIC)?;
    let count = header.dims[0] as usize;
    let pixels = header.dims[1] as usize * header.dims[2] as usize;
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    let x = Matrix::from_col_major(pixels, count, data)?;
    Ok(DatasetMatrix::new(x, None)?)
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let (_, payload) = parse(bytes, LABELS_MAGIC)?;
    Ok(payload.iter().map(|&b| usize::from(b)).collect())
}

pub fn load_idx_images(path: &Path) -> Result<DatasetMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_images(&bytes)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&bytes)
}

/// Serializes u8 images (row-major, `rows × cols` each) as an IDX file.
pub fn encode_images(images: &[Vec<u8>], rows: u32, cols: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * (rows * cols) as usize);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend_from_slice(&[0, 255, 128, 64, 255, 0, 0, 0]);
        b
    }

    #[test]
    fn two_image_fixture() {
        let ds = decode_images(&fixture()).unwrap();
        assert_eq!((ds.dim(), ds.num_samples()), (4, 2));
        assert_eq!(ds.sample(0), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert_eq!(ds.sample(1), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            fixture(),
            encode_images(&[vec![0, 255, 128, 64], vec![255, 0, 0, 0]], 2, 2)
        );
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let labels = encode_labels(&[1, 2]);
        assert!(matches!(decode_images(&labels), Err(Error::Format(_))));
        assert!(matches!(decode_labels(&fixture()), Err(Error::Format(_))));
    }

    #[test]
    fn empty_files_decode_to_nothing() {
        let ds = decode_images(&encode_images(&[], 28, 28)).unwrap();
        assert_eq!((ds.dim(), ds.num_samples()), (784, 0));
        assert!(decode_labels(&encode_labels(&[])).unwrap().is_empty());
    }

    #[test]
    fn label_fixture() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9];
        assert_eq!(decode_labels(&bytes).unwrap(), vec![7, 0, 9]);
    }

    #[test]
    fn payload_length_must_match() {
        let mut short = fixture();
        short.pop();
        assert!(decode_images(&short).is_err());
        let mut long = fixture();
        long.push(0);
        assert!(decode_images(&long).is_err());
        assert!(decode_labels(&[0, 0, 8, 1, 0, 0, 0, 3, 7, 0]).is_err());
        assert!(decode_images(&[0, 0, 8]).is_err());
        assert!(decode_images(&[0, 0, 8, 3, 0, 0]).is_err());
    }

    #[test]
    fn huge_dimensions_do_not_overflow() {
        let bytes = [
            0, 0, 8, 3, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255,
        ];
        assert!(decode_images(&bytes).is_err());
    }
}
