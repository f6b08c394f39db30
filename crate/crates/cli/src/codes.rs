//! Output formats for encoded datasets.
//!
//! Binary (little-endian):
//!
//! ```text
//! offset  size    field
//!      0     4    magic "KSCD"
//!      4     1    version (1)
//!      5     1    flags: bit 0 = outlier block present
//!      6     2    reserved, 0
//!      8     4    n, code dimension (u32)
//!     12     4    m, data dimension (u32)
//!     16     4    N, sample count (u32)
//!     20  8·nN    codes S, column-major f64 (one column per sample)
//!      …  8·mN    outliers O, column-major f64, only if flag bit 0 is set
//! ```
//!
//! CSV: the matrix `S` as `n` lines of `N` comma-separated values (sample
//! `j` in column `j`), followed by the `m` lines of `O` when outliers are
//! requested. Values use Rust's shortest round-trip float formatting. An
//! empty dataset produces an empty file.

use std::fmt::Write as _;

use kspc_core::Matrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KSCD";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CodeFormat {
    Binary,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCodes {
    pub codes: Matrix,
    pub outliers: Option<Matrix>,
}

pub fn encode_binary(codes: &EncodedCodes) -> Result<Vec<u8>> {
    let s = &codes.codes;
    let m = codes.outliers.as_ref().map_or(0, |o| o.rows());
    let mut out = Vec::with_capacity(20 + 8 * (s.as_slice().len() + m * s.cols()));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(u8::from(codes.outliers.is_some()));
    out.extend_from_slice(&[0, 0]);
    for v in [s.rows(), m, s.cols()] {
        let v = u32::try_from(v).map_err(|_| Error::format("dimension does not fit in u32"))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in s.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(o) = &codes.outliers {
        for v in o.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_binary(bytes: &[u8]) -> Result<EncodedCodes> {
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(Error::format("not a codes file"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(format!(
            "unsupported codes version {}",
            bytes[4]
        )));
    }
    let with_outliers = bytes[5] & 1 == 1;
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (n, m, count) = (word(8), word(12), word(16));
    let floats: Vec<f64> = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let expected = n * count + if with_outliers { m * count } else { 0 };
    if !(bytes.len() - 20).is_multiple_of(8) || floats.len() != expected {
        return Err(Error::format("codes payload length mismatch"));
    }
    let (s, o) = floats.split_at(n * count);
    Ok(EncodedCodes {
        codes: Matrix::from_col_major(n, count, s.to_vec())?,
        outliers: if with_outliers {
            Some(Matrix::from_col_major(m, count, o.to_vec())?)
        } else {
            None
        },
    })
}

fn push_rows(out: &mut String, mat: &Matrix) {
    for i in 0..mat.rows() {
        for j in 0..mat.cols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", mat[(i, j)]);
        }
        out.push('\n');
    }
}

pub fn encode_csv(codes: &EncodedCodes) -> String {
    let mut out = String::new();
    if codes.codes.cols() == 0 {
        return out;
    }
    push_rows(&mut out, &codes.codes);
    if let Some(o) = &codes.outliers {
        push_rows(&mut out, o);
    }
    out
}
