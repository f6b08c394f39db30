//! Versioned little-endian binary container for a trained model.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "KSPC"
//!      4     1  format version (1)
//!      5     1  variant: 0 = rpca, 1 = ksparse
//!      6     1  flags: bit 0 = atoms renormalized during training
//!      7     1  reserved, 0
//!      8     4  m, data dimension (u32)
//!     12     4  n, code dimension (u32)
//!     16     4  depth (u32)
//!     20     4  k_star (u32)
//!     24     4  k (u32)
//!     28     8  lambda_star (f64)
//!     36     8  lambda (f64)
//!     44     8  seed (u64)
//!     52     4  epochs (u32)
//!     56     4  batch size (u32)
//!     60     8  learning rate (f64)
//!     68     8  final objective (f64)
//!     76  8·mn  dictionary, column-major f64
//!    end     4  CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so save → load is bit-exact.

use std::fs;
use std::path::Path;

use kspc_core::training::{TrainedModel, TrainingMeta};
use kspc_core::{Dictionary, Hyper, Matrix, Variant};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KSPC";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 76;

fn variant_code(v: Variant) -> u8 {
    match v {
        Variant::Rpca => 0,
        Variant::KSparse => 1,
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format(format!("{what} {v} does not fit in u32")))
}

pub fn encode_model(model: &TrainedModel) -> Result<Vec<u8>> {
    let d = model.dictionary.atoms();
    let h = &model.hyper;
    let meta = &model.meta;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * d.as_slice().len() + 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(variant_code(h.variant));
    out.push(u8::from(meta.renormalize_atoms));
    out.push(0);
    for (v, what) in [
        (d.rows(), "data dimension"),
        (d.cols(), "code dimension"),
        (h.depth, "depth"),
        (h.k_star, "k_star"),
        (h.k, "k"),
    ] {
        out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    out.extend_from_slice(&h.lambda_star.to_le_bytes());
    out.extend_from_slice(&h.lambda.to_le_bytes());
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&to_u32(meta.epochs, "epochs")?.to_le_bytes());
    out.extend_from_slice(&to_u32(meta.batch_size, "batch size")?.to_le_bytes());
    out.extend_from_slice(&meta.learning_rate.to_le_bytes());
    out.extend_from_slice(&meta.final_objective.to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);
    for v in d.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut buf = [0u8; N];
        buf.copy_from_slice(&self.bytes[self.at..self.at + N]);
        self.at += N;
        buf
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn u32(&mut self) -> usize {
        u32::from_le_bytes(self.take()) as usize
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::format("model file truncated"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("not a model file (bad magic)"));
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader { bytes: body, at: 5 };
    let variant = match r.u8() {
        0 => Variant::Rpca,
        1 => Variant::KSparse,
        other => return Err(Error::format(format!("unknown variant code {other}"))),
    };
    let flags = r.u8();
    let _reserved = r.u8();
    let m = r.u32();
    let n = r.u32();
    let depth = r.u32();
    let k_star = r.u32();
    let k = r.u32();
    let lambda_star = r.f64();
    let lambda = r.f64();
    let seed = r.u64();
    let epochs = r.u32();
    let batch_size = r.u32();
    let learning_rate = r.f64();
    let final_objective = r.f64();

    let expected = m
        .checked_mul(n)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::format("dictionary size overflows"))?;
    if body.len() - HEADER_LEN != expected {
        return Err(Error::format(format!(
            "dictionary payload has {} bytes, header declares {expected}",
            body.len() - HEADER_LEN
        )));
    }
    let data = body[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let dictionary = Dictionary::new(Matrix::from_col_major(m, n, data)?)?;
    let hyper = Hyper {
        variant,
        lambda_star,
        lambda,
        k_star,
        k,
        depth,
    };
    hyper.validate(m, n)?;
    Ok(TrainedModel {
        dictionary,
        hyper,
        meta: TrainingMeta {
            seed,
            epochs,
            batch_size,
            learning_rate,
            renormalize_atoms: flags & 1 == 1,
            final_objective,
        },
    })
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let bytes = encode_model(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_model() -> TrainedModel {
        let d = Matrix::from_rows(&[&[0.5, -1.25, 3.0], &[1e-300, 0.1, -0.0]]).unwrap();
        TrainedModel {
            dictionary: Dictionary::new(d).unwrap(),
            hyper: Hyper::ksparse(0.3, 0.05, 2, 1).with_depth(7),
            meta: TrainingMeta {
                seed: 42,
                epochs: 3,
                batch_size: 16,
                learning_rate: 0.125,
                renormalize_atoms: true,
                final_objective: 1.0 / 3.0,
            },
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let model = sample_model();
        let bytes = encode_model(&model).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 8 * 6 + 4);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(encode_model(&back).unwrap(), bytes);
    }

    #[test]
    fn flipped_bytes_fail_the_checksum() {
        let bytes = encode_model(&sample_model()).unwrap();
        for at in [5, 8, 40, HEADER_LEN + 3, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[at] ^= 0x10;
            assert!(
                matches!(decode_model(&bad), Err(Error::Checksum { .. })),
                "flip at {at} not detected"
            );
        }
    }

    #[test]
    fn unknown_version_is_refused() {
        let mut bytes = encode_model(&sample_model()).unwrap();
        bytes[4] = 255;
        let len = bytes.len();
        let crc = crc32fast::hash(&bytes[..len - 4]);
        bytes[len - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode_model(&bytes),
            Err(Error::UnsupportedVersion(255))
        ));
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(decode_model(b"KSPC").is_err());
        assert!(decode_model(&[0u8; 100]).is_err());
    }
}
