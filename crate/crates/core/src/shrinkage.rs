//! Elementwise and top-k shrinkage operators.
//!
//! * [`soft_threshold`] `τ_t(b) = sign(b)·max(0, |b| − t)`, the prox of a weighted L1 norm.
//! * [`k_sparse`] keeps the `k` largest-magnitude entries and zeroes the rest.
//! * [`soft_k_sparse`] `κ_{t,k}(b) = τ_t(b) − τ_t(kSparse(b, k)) + kSparse(b, k)`: the
//!   top-k entries pass through untouched, everything else is soft-thresholded. This is
//!   the prox of `t·‖u − kSparse(u, k)‖₁`.
//!
//! Ranking is by absolute value; ties at rank `k` go to the lower index.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::model::{EncoderParams, Variant};
use crate::{Error, Result};

/// Per-coordinate thresholds plus the size of the protected top-k support.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSpec {
    t: Vec<f64>,
    k: usize,
}

impl ThresholdSpec {
    pub fn new(t: Vec<f64>, k: usize) -> Result<Self> {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "thresholds" });
        }
        if t.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter("thresholds must be nonnegative"));
        }
        if k > t.len() {
            return Err(Error::OutOfRange {
                what: "protected support size k",
                value: k,
                max: t.len(),
            });
        }
        Ok(ThresholdSpec { t, k })
    }

    pub fn uniform(len: usize, t: f64, k: usize) -> Result<Self> {
        ThresholdSpec::new(vec![t; len], k)
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.t
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn apply(&self, b: &[f64]) -> Result<Vec<f64>> {
        soft_k_sparse(b, &self.t, self.k)
    }
}

#[inline]
fn shrink(b: f64, t: f64) -> f64 {
    let excess = b.abs() - t;
    if excess > 0.0 {
        if b < 0.0 {
            -excess
        } else {
            excess
        }
    } else {
        0.0
    }
}

fn check_len(b: &[f64], t: &[f64]) -> Result<()> {
    if b.len() != t.len() {
        return Err(Error::DimensionMismatch {
            what: "threshold vector length",
            expected: b.len(),
            found: t.len(),
        });
    }
    Ok(())
}

fn check_k(len: usize, k: usize) -> Result<()> {
    if k > len {
        return Err(Error::OutOfRange {
            what: "k",
            value: k,
            max: len,
        });
    }
    Ok(())
}

pub fn soft_threshold(b: &[f64], t: &[f64]) -> Result<Vec<f64>> {
    check_len(b, t)?;
    Ok(b.iter().zip(t).map(|(&bi, &ti)| shrink(bi, ti)).collect())
}

/// Strict "ranks above" order: larger magnitude first, then lower index.
#[inline]
fn rank_order(b: &[f64], i: usize, j: usize) -> Ordering {
    b[j].abs().total_cmp(&b[i].abs()).then_with(|| i.cmp(&j))
}

/// Marks the `k` largest-magnitude entries of `b` in `mask`.
///
/// `scratch` is reused between calls to avoid reallocating the index buffer.
pub fn top_k_mask_into(b: &[f64], k: usize, mask: &mut [bool], scratch: &mut Vec<usize>) {
    debug_assert!(k <= b.len());
    debug_assert_eq!(mask.len(), b.len());
    if k == 0 {
        mask.iter_mut().for_each(|m| *m = false);
        return;
    }
    if k == b.len() {
        mask.iter_mut().for_each(|m| *m = true);
        return;
    }
    scratch.clear();
    scratch.extend(0..b.len());
    scratch.select_nth_unstable_by(k - 1, |&i, &j| rank_order(b, i, j));
    mask.iter_mut().for_each(|m| *m = false);
    for &i in &scratch[..k] {
        mask[i] = true;
    }
}

pub fn top_k_mask(b: &[f64], k: usize) -> Result<Vec<bool>> {
    check_k(b.len(), k)?;
    let mut mask = vec![false; b.len()];
    top_k_mask_into(b, k, &mut mask, &mut Vec::new());
    Ok(mask)
}

pub fn k_sparse(b: &[f64], k: usize) -> Result<Vec<f64>> {
    let mask = top_k_mask(b, k)?;
    Ok(b.iter()
        .zip(&mask)
        .map(|(&v, &keep)| if keep { v } else { 0.0 })
        .collect())
}

pub fn soft_k_sparse(b: &[f64], t: &[f64], k: usize) -> Result<Vec<f64>> {
    check_len(b, t)?;
    check_k(b.len(), k)?;
    let mut out = vec![0.0; b.len()];
    let mut pass = vec![false; b.len()];
    soft_k_sparse_into(b, t, k, &mut out, &mut pass, &mut Vec::new());
    Ok(out)
}

/// In-place `κ_{t,k}` that also reports, per coordinate, whether the output
/// moves one-for-one with the input (protected, or shrunk but not clipped to
/// zero). That pattern is the local Jacobian diagonal used by backprop.
pub(crate) fn soft_k_sparse_into(
    b: &[f64],
    t: &[f64],
    k: usize,
    out: &mut [f64],
    pass: &mut [bool],
    scratch: &mut Vec<usize>,
) {
    top_k_mask_into(b, k, pass, scratch);
    for i in 0..b.len() {
        if pass[i] {
            out[i] = b[i];
        } else {
            out[i] = shrink(b[i], t[i]);
            pass[i] = t[i] == 0.0 || b[i].abs() > t[i];
        }
    }
}

/// Soft threshold with the same pass-pattern output as [`soft_k_sparse_into`].
pub(crate) fn soft_threshold_into(b: &[f64], t: &[f64], out: &mut [f64], pass: &mut [bool]) {
    for i in 0..b.len() {
        out[i] = shrink(b[i], t[i]);
        pass[i] = t[i] == 0.0 || b[i].abs() > t[i];
    }
}

/// The stacked proximal map applied to `z = (s; o)`.
///
/// Rpca soft-thresholds the whole vector with the stacked thresholds (zero on
/// the code block). KSparse applies `κ` separately to the code block with
/// `k*` and to the outlier block with `k`.
pub fn stacked_prox(z: &[f64], params: &EncoderParams) -> Result<Vec<f64>> {
    let len = params.code_dim() + params.data_dim();
    if z.len() != len {
        return Err(Error::DimensionMismatch {
            what: "stacked vector length",
            expected: len,
            found: z.len(),
        });
    }
    let mut out = vec![0.0; len];
    let mut pass = vec![false; len];
    stacked_prox_into(z, params, &mut out, &mut pass, &mut Vec::new());
    Ok(out)
}

pub(crate) fn stacked_prox_into(
    z: &[f64],
    params: &EncoderParams,
    out: &mut [f64],
    pass: &mut [bool],
    scratch: &mut Vec<usize>,
) {
    let t = params.thresholds();
    match params.variant() {
        Variant::Rpca => soft_threshold_into(z, t, out, pass),
        Variant::KSparse => {
            let n = params.code_dim();
            let (zs, zo) = z.split_at(n);
            let (ts, to) = t.split_at(n);
            let (out_s, out_o) = out.split_at_mut(n);
            let (pass_s, pass_o) = pass.split_at_mut(n);
            soft_k_sparse_into(zs, ts, params.k_star(), out_s, pass_s, scratch);
            soft_k_sparse_into(zo, to, params.k(), out_o, pass_o, scratch);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn soft_threshold_examples() {
        close(
            &soft_threshold(&[0.5, -2.0, 0.1], &[0.3; 3]).unwrap(),
            &[0.2, -1.7, 0.0],
        );
        let b = [1.5, -0.25, 0.0, 7.0];
        assert_eq!(soft_threshold(&b, &[0.0; 4]).unwrap(), b.to_vec());
        assert_eq!(
            soft_threshold(&[1.0, -1.0], &[5.0, 5.0]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn soft_threshold_rejects_length_mismatch() {
        assert!(matches!(
            soft_threshold(&[1.0, 2.0], &[0.1]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn k_sparse_examples() {
        assert_eq!(
            k_sparse(&[3.0, -5.0, 1.0, 0.5], 2).unwrap(),
            vec![3.0, -5.0, 0.0, 0.0]
        );
        assert_eq!(k_sparse(&[3.0, -5.0], 0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(k_sparse(&[3.0, -5.0], 2).unwrap(), vec![3.0, -5.0]);
        // tie at rank 1: lowest index wins
        assert_eq!(k_sparse(&[2.0, -2.0, 1.0], 1).unwrap(), vec![2.0, 0.0, 0.0]);
        assert_eq!(
            k_sparse(&[1.0, -2.0, 2.0, 2.0], 2).unwrap(),
            vec![0.0, -2.0, 2.0, 0.0]
        );
    }

    #[test]
    fn k_sparse_rejects_large_k() {
        assert!(matches!(k_sparse(&[1.0], 2), Err(Error::OutOfRange { .. })));
        assert!(soft_k_sparse(&[1.0], &[0.0], 2).is_err());
    }

    #[test]
    fn soft_k_sparse_examples() {
        let b = [3.0, -5.0, 1.0, 0.5];
        close(
            &soft_k_sparse(&b, &[0.3; 4], 2).unwrap(),
            &[3.0, -5.0, 0.7, 0.2],
        );
        assert_eq!(
            soft_k_sparse(&b, &[0.3; 4], 0).unwrap(),
            soft_threshold(&b, &[0.3; 4]).unwrap()
        );
        assert_eq!(soft_k_sparse(&b, &[0.3; 4], 4).unwrap(), b.to_vec());
    }

    #[test]
    fn threshold_spec_validation() {
        assert!(ThresholdSpec::new(vec![0.1, -0.1], 0).is_err());
        assert!(ThresholdSpec::new(vec![0.1, f64::NAN], 0).is_err());
        assert!(ThresholdSpec::new(vec![0.1], 2).is_err());
        let spec = ThresholdSpec::uniform(4, 0.3, 2).unwrap();
        close(
            &spec.apply(&[3.0, -5.0, 1.0, 0.5]).unwrap(),
            &[3.0, -5.0, 0.7, 0.2],
        );
    }

    #[test]
    fn pass_pattern_marks_live_coordinates() {
        let b = [3.0, -5.0, 1.0, 0.2];
        let mut out = [0.0; 4];
        let mut pass = [false; 4];
        soft_k_sparse_into(&b, &[0.3; 4], 1, &mut out, &mut pass, &mut Vec::new());
        assert_eq!(pass, [true, true, true, false]);
        soft_threshold_into(&[0.0, 0.1], &[0.0, 0.1], &mut out[..2], &mut pass[..2]);
        assert_eq!(&pass[..2], &[true, false]);
    }
}
