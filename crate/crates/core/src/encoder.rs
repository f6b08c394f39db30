//! Proximal-descent encoding.
//!
//! One layer is
//!
//! ```text
//! z ← π(b)
//! b ← b + H·(z_new − z_old)
//! ```
//!
//! starting from `z⁰ = 0`, `b⁰ = W·x`. [`encode_iterative`] repeats it until
//! `z` stops moving; [`encode_unrolled`] runs exactly `depth` layers and
//! records what backpropagation needs. Both go through [`ProximalDescent`],
//! so an unrolled network of depth K and the loop truncated at K iterations
//! produce the same bits.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{norm2, norm2_sq, Matrix};
use crate::model::{DatasetMatrix, EncoderParams, SparseRepresentation};
use crate::shrinkage::stacked_prox_into;
use crate::{Error, Result};

/// Current iterate `z`, pre-activation `b` and iteration count.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeState {
    pub z: Vec<f64>,
    pub b: Vec<f64>,
    pub iter: usize,
}

/// Stepper for the proximal-descent recurrence of one sample.
///
/// The `b` update of a step is deferred until the next step needs it, so a
/// fixed-depth pass never pays for the unused final update.
#[derive(Debug, Clone)]
pub struct ProximalDescent<'p> {
    params: &'p EncoderParams,
    z: Vec<f64>,
    b: Vec<f64>,
    delta: Vec<f64>,
    pending: bool,
    iter: usize,
    next: Vec<f64>,
    pass: Vec<bool>,
    h_out: Vec<f64>,
    scratch_m: Vec<f64>,
    scratch_idx: Vec<usize>,
}

impl<'p> ProximalDescent<'p> {
    pub fn new(params: &'p EncoderParams, x: &[f64]) -> Result<Self> {
        let (m, n) = (params.data_dim(), params.code_dim());
        if x.len() != m {
            return Err(Error::DimensionMismatch {
                what: "sample length",
                expected: m,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "sample" });
        }
        let mut b = vec![0.0; n + m];
        params.apply_w_into(x, &mut b);
        Ok(ProximalDescent {
            params,
            z: vec![0.0; n + m],
            b,
            delta: vec![0.0; n + m],
            pending: false,
            iter: 0,
            next: vec![0.0; n + m],
            pass: vec![false; n + m],
            h_out: vec![0.0; n + m],
            scratch_m: vec![0.0; m],
            scratch_idx: Vec::new(),
        })
    }

    fn flush(&mut self) {
        if self.pending {
            self.params
                .apply_h_into(&self.delta, &mut self.h_out, &mut self.scratch_m);
            self.b
                .iter_mut()
                .zip(&self.h_out)
                .for_each(|(b, &h)| *b += h);
            self.pending = false;
        }
    }

    /// Advances one layer and returns `‖z_new − z_old‖₂`.
    pub fn step(&mut self) -> Result<f64> {
        self.flush();
        if self.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "pre-activation",
            });
        }
        stacked_prox_into(
            &self.b,
            self.params,
            &mut self.next,
            &mut self.pass,
            &mut self.scratch_idx,
        );
        for ((d, &new), &old) in self.delta.iter_mut().zip(&self.next).zip(&self.z) {
            *d = new - old;
        }
        core::mem::swap(&mut self.z, &mut self.next);
        self.pending = true;
        self.iter += 1;
        Ok(norm2(&self.delta))
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// The pre-activation the most recent step consumed.
    pub(crate) fn consumed_b(&self) -> &[f64] {
        &self.b
    }

    /// Pass pattern of the most recent step (true where `π` had slope one).
    pub(crate) fn pass(&self) -> &[bool] {
        &self.pass
    }

    pub fn iterations(&self) -> usize {
        self.iter
    }

    /// Snapshot with `b` brought up to date.
    pub fn state(&mut self) -> EncodeState {
        self.flush();
        EncodeState {
            z: self.z.clone(),
            b: self.b.clone(),
            iter: self.iter,
        }
    }

    pub fn representation(&self) -> SparseRepresentation {
        let n = self.params.code_dim();
        SparseRepresentation::new(
            self.params.dictionary(),
            self.z[..n].to_vec(),
            self.z[n..].to_vec(),
        )
    }
}

/// Runs until `‖z^{k+1} − z^k‖ ≤ tol·max(1, ‖z^k‖)` or `max_iter` steps.
pub fn encode_iterative(
    x: &[f64],
    params: &EncoderParams,
    tol: f64,
    max_iter: usize,
) -> Result<SparseRepresentation> {
    Ok(encode_iterative_with_state(x, params, tol, max_iter)?.0)
}

/// [`encode_iterative`] that also returns the final state.
pub fn encode_iterative_with_state(
    x: &[f64],
    params: &EncoderParams,
    tol: f64,
    max_iter: usize,
) -> Result<(SparseRepresentation, EncodeState)> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidParameter("tolerance must be nonnegative"));
    }
    if max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be at least 1"));
    }
    let mut pd = ProximalDescent::new(params, x)?;
    for _ in 0..max_iter {
        let prev_norm = norm2_sq(pd.z());
        let change = pd.step()?;
        if change <= tol * libm::sqrt(prev_norm).max(1.0) {
            break;
        }
    }
    let rep = pd.representation();
    Ok((rep, pd.state()))
}

/// Per-layer record of an unrolled pass.
///
/// Layer `j` (0-based) consumed pre-activation `b_j` and produced `z_{j+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    dim: usize,
    depth: usize,
    pre_activations: Vec<f64>,
    outputs: Vec<f64>,
    pass: Vec<bool>,
}

impl LayerTrace {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn pre_activation(&self, layer: usize) -> &[f64] {
        &self.pre_activations[layer * self.dim..(layer + 1) * self.dim]
    }

    pub fn output(&self, layer: usize) -> &[f64] {
        &self.outputs[layer * self.dim..(layer + 1) * self.dim]
    }

    pub fn pass(&self, layer: usize) -> &[bool] {
        &self.pass[layer * self.dim..(layer + 1) * self.dim]
    }
}

/// Exactly `params.depth()` layers, with the trace needed for backprop.
pub fn encode_unrolled(
    x: &[f64],
    params: &EncoderParams,
) -> Result<(SparseRepresentation, LayerTrace)> {
    let depth = params.depth();
    let dim = params.code_dim() + params.data_dim();
    let mut trace = LayerTrace {
        dim,
        depth,
        pre_activations: Vec::with_capacity(depth * dim),
        outputs: Vec::with_capacity(depth * dim),
        pass: Vec::with_capacity(depth * dim),
    };
    let mut pd = ProximalDescent::new(params, x)?;
    for _ in 0..depth {
        pd.step()?;
        trace.pre_activations.extend_from_slice(pd.consumed_b());
        trace.outputs.extend_from_slice(pd.z());
        trace.pass.extend_from_slice(pd.pass());
    }
    Ok((pd.representation(), trace))
}

/// Inference-only unrolled pass; no trace is kept.
pub fn encode(x: &[f64], params: &EncoderParams) -> Result<SparseRepresentation> {
    let mut pd = ProximalDescent::new(params, x)?;
    for _ in 0..params.depth() {
        pd.step()?;
    }
    Ok(pd.representation())
}

/// Encodes every column of `x`; returns codes `S` (n × N) and outliers `O` (m × N).
pub fn encode_columns(x: &Matrix, params: &EncoderParams) -> Result<(Matrix, Matrix)> {
    let (m, n) = (params.data_dim(), params.code_dim());
    if x.rows() != m {
        return Err(Error::DimensionMismatch {
            what: "data rows",
            expected: m,
            found: x.rows(),
        });
    }
    let mut s = Matrix::zeros(n, x.cols());
    let mut o = Matrix::zeros(m, x.cols());
    for (i, col) in x.columns().enumerate() {
        let mut pd = ProximalDescent::new(params, col)?;
        for _ in 0..params.depth() {
            pd.step()?;
        }
        s.col_mut(i).copy_from_slice(&pd.z()[..n]);
        o.col_mut(i).copy_from_slice(&pd.z()[n..]);
    }
    Ok((s, o))
}

pub fn encode_batch(data: &DatasetMatrix, params: &EncoderParams) -> Result<(Matrix, Matrix)> {
    encode_columns(data.x(), params)
}

/// Health metrics of a decomposition `X ≈ D·S + O`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    /// `‖X − DS − O‖_F / ‖X‖_F`, defined as 0 when `X = 0`.
    pub recon_error: f64,
    /// Fraction of code entries with magnitude above [`DENSITY_EPS`].
    pub code_density: f64,
    /// `‖O‖² / (‖DS‖² + ‖O‖² + ε)`. Near 1 with zero density means the
    /// outliers swallowed the data.
    pub outlier_energy_ratio: f64,
}

pub const DENSITY_EPS: f64 = 1e-8;
const ENERGY_EPS: f64 = 1e-12;

/// Running sums behind [`Diagnostics`], so batches can be accumulated.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiagnosticsAccumulator {
    residual_sq: f64,
    data_sq: f64,
    low_rank_sq: f64,
    outlier_sq: f64,
    nonzero_codes: usize,
    code_entries: usize,
}

impl DiagnosticsAccumulator {
    pub fn add_sample(&mut self, x: &[f64], s: &[f64], o: &[f64], low_rank: &[f64]) {
        for ((xi, li), oi) in x.iter().zip(low_rank).zip(o) {
            let e = xi - li - oi;
            self.residual_sq += e * e;
        }
        self.data_sq += norm2_sq(x);
        self.low_rank_sq += norm2_sq(low_rank);
        self.outlier_sq += norm2_sq(o);
        self.nonzero_codes += s.iter().filter(|v| v.abs() > DENSITY_EPS).count();
        self.code_entries += s.len();
    }

    pub fn finish(&self) -> Diagnostics {
        let recon_error = if self.data_sq > 0.0 {
            libm::sqrt(self.residual_sq / self.data_sq)
        } else {
            0.0
        };
        let code_density = if self.code_entries > 0 {
            self.nonzero_codes as f64 / self.code_entries as f64
        } else {
            0.0
        };
        Diagnostics {
            recon_error,
            code_density,
            outlier_energy_ratio: self.outlier_sq
                / (self.low_rank_sq + self.outlier_sq + ENERGY_EPS),
        }
    }
}

pub fn diagnostics(x: &Matrix, s: &Matrix, o: &Matrix, d: &Matrix) -> Result<Diagnostics> {
    let checks = [
        ("X rows", d.rows(), x.rows()),
        ("S rows", d.cols(), s.rows()),
        ("S columns", x.cols(), s.cols()),
        ("O rows", d.rows(), o.rows()),
        ("O columns", x.cols(), o.cols()),
    ];
    for (what, expected, found) in checks {
        if expected != found {
            return Err(Error::DimensionMismatch {
                what,
                expected,
                found,
            });
        }
    }
    let mut acc = DiagnosticsAccumulator::default();
    let mut low_rank = vec![0.0; d.rows()];
    for i in 0..x.cols() {
        d.mul_vec_into(s.col(i), &mut low_rank);
        acc.add_sample(x.col(i), s.col(i), o.col(i), &low_rank);
    }
    Ok(acc.finish())
}
