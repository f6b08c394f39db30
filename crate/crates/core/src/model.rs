//! Central data types and the derivation of encoder weights from a dictionary.
//!
//! For a dictionary `D` (m × n) and step `1/α`, both variants share
//!
//! ```text
//! W = (1/α)·[Dᵀ; I]                       (n+m) × m
//! H = I − (1/α)·[[DᵀD + λ'I, Dᵀ], [D, I]]  (n+m) × (n+m)
//! ```
//!
//! with `λ' = λ*` for [`Variant::Rpca`] and `λ' = 0` for [`Variant::KSparse`],
//! whose code penalty lives in the thresholds instead:
//!
//! ```text
//! Rpca:    t = (λ/α)·[0 … 0; 1 … 1]
//! KSparse: t = (1/α)·[λ* … λ*; λ … λ]
//! ```
//!
//! `H` and `W` are dense (n+m)² objects. [`EncoderParams`] keeps them in
//! factored form and applies them through `D` in O(mn); [`EncoderParams::h_matrix`]
//! and [`EncoderParams::w_matrix`] materialize them when needed.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{dot, norm1, norm2, norm2_sq, Matrix};
use crate::shrinkage::top_k_mask;
use crate::{Error, Result};

/// Multiplicative safety margin applied to the spectral-norm estimate.
pub const STEP_SIZE_INFLATION: f64 = 1.01;
pub const POWER_ITERATION_TOL: f64 = 1e-6;
pub const POWER_ITERATION_MAX_ITER: usize = 1000;
const POWER_ITERATION_SEED: u64 = 0x5e_ed0f_a1fa;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Rpca,
    KSparse,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Rpca => "rpca",
            Variant::KSparse => "ksparse",
        }
    }
}

/// Columns are atoms: `D` maps an n-dimensional code to m-dimensional data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Matrix,
}

impl Dictionary {
    pub fn new(atoms: Matrix) -> Result<Self> {
        if atoms.rows() == 0 {
            return Err(Error::ZeroDimension {
                what: "dictionary rows",
            });
        }
        if atoms.cols() == 0 {
            return Err(Error::ZeroDimension {
                what: "dictionary columns",
            });
        }
        if !atoms.is_finite() {
            return Err(Error::NonFinite { what: "dictionary" });
        }
        Ok(Dictionary { atoms })
    }

    /// Gaussian entries with every column scaled to unit norm.
    pub fn random_unit_columns<R: Rng + ?Sized>(
        data_dim: usize,
        code_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut atoms = Matrix::zeros(data_dim, code_dim);
        for v in atoms.as_mut_slice() {
            *v = rng.sample(StandardNormal);
        }
        let mut d = Dictionary::new(atoms)?;
        d.normalize_atoms()?;
        Ok(d)
    }

    /// m, the data dimension.
    pub fn data_dim(&self) -> usize {
        self.atoms.rows()
    }

    /// n, the code dimension.
    pub fn code_dim(&self) -> usize {
        self.atoms.cols()
    }

    pub fn atoms(&self) -> &Matrix {
        &self.atoms
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        self.atoms.col(j)
    }

    pub fn into_matrix(self) -> Matrix {
        self.atoms
    }

    pub(crate) fn atoms_mut(&mut self) -> &mut Matrix {
        &mut self.atoms
    }

    /// Rescales every atom to unit Euclidean norm.
    pub fn normalize_atoms(&mut self) -> Result<()> {
        for j in 0..self.code_dim() {
            let col = self.atoms.col_mut(j);
            let norm = norm2(col);
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::DeadAtom { index: j });
            }
            col.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(())
    }

    /// Fails on the first atom with zero (or non-finite) norm.
    pub fn check_atoms(&self) -> Result<()> {
        for (j, col) in self.atoms.columns().enumerate() {
            let norm = norm2(col);
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::DeadAtom { index: j });
            }
        }
        Ok(())
    }

    /// Mean over atoms of [`support_concentration`] with the given fraction.
    pub fn mean_support_concentration(&self, fraction: f64) -> f64 {
        let n = self.code_dim() as f64;
        self.atoms
            .columns()
            .map(|a| support_concentration(a, fraction))
            .sum::<f64>()
            / n
    }
}

/// Share of `‖v‖²` carried by its `ceil(fraction·len)` largest-magnitude
/// entries. 1 for a one-hot vector, `fraction` (rounded up) for a flat one.
/// A zero vector yields 0.
pub fn support_concentration(v: &[f64], fraction: f64) -> f64 {
    let total = norm2_sq(v);
    if v.is_empty() || !(total > 0.0) {
        return 0.0;
    }
    let keep = libm::ceil(fraction.clamp(0.0, 1.0) * v.len() as f64) as usize;
    let mut sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    sq.sort_unstable_by(|a, b| b.total_cmp(a));
    sq[..keep].iter().sum::<f64>() / total
}

/// Regularization and architecture settings shared by encoding and training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub variant: Variant,
    /// Code penalty weight λ*.
    pub lambda_star: f64,
    /// Outlier penalty weight λ.
    pub lambda: f64,
    /// Protected code support (KSparse only).
    pub k_star: usize,
    /// Protected outlier support (KSparse only).
    pub k: usize,
    /// Number of unrolled layers.
    pub depth: usize,
}

impl Hyper {
    pub const DEFAULT_DEPTH: usize = 10;

    pub fn rpca(lambda_star: f64, lambda: f64) -> Self {
        Hyper {
            variant: Variant::Rpca,
            lambda_star,
            lambda,
            k_star: 0,
            k: 0,
            depth: Self::DEFAULT_DEPTH,
        }
    }

    pub fn ksparse(lambda_star: f64, lambda: f64, k_star: usize, k: usize) -> Self {
        Hyper {
            variant: Variant::KSparse,
            lambda_star,
            lambda,
            k_star,
            k,
            depth: Self::DEFAULT_DEPTH,
        }
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn validate(&self, data_dim: usize, code_dim: usize) -> Result<()> {
        if !(self.lambda_star.is_finite() && self.lambda.is_finite()) {
            return Err(Error::NonFinite {
                what: "regularization weights",
            });
        }
        if self.lambda_star < 0.0 || self.lambda < 0.0 {
            return Err(Error::InvalidParameter(
                "regularization weights must be nonnegative",
            ));
        }
        if self.depth == 0 {
            return Err(Error::InvalidParameter("depth must be at least 1"));
        }
        if self.k_star > code_dim {
            return Err(Error::OutOfRange {
                what: "k_star",
                value: self.k_star,
                max: code_dim,
            });
        }
        if self.k > data_dim {
            return Err(Error::OutOfRange {
                what: "k",
                value: self.k,
                max: data_dim,
            });
        }
        Ok(())
    }

    /// Weight of the identity added to the DᵀD block of the smooth Hessian.
    fn ridge(&self) -> f64 {
        match self.variant {
            Variant::Rpca => self.lambda_star,
            Variant::KSparse => 0.0,
        }
    }
}

/// Everything one proximal-descent layer needs: `H`, `W`, `t` and `α`, all
/// derived from a dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    dict: Dictionary,
    hyper: Hyper,
    alpha: f64,
    thresholds: Vec<f64>,
}

impl EncoderParams {
    pub fn variant(&self) -> Variant {
        self.hyper.variant
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda_star(&self) -> f64 {
        self.hyper.lambda_star
    }

    pub fn lambda(&self) -> f64 {
        self.hyper.lambda
    }

    pub fn k_star(&self) -> usize {
        self.hyper.k_star
    }

    pub fn k(&self) -> usize {
        self.hyper.k
    }

    pub fn depth(&self) -> usize {
        self.hyper.depth
    }

    pub fn code_dim(&self) -> usize {
        self.dict.code_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.dict.data_dim()
    }

    /// The stacked threshold vector `t` (length n+m).
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub(crate) fn ridge(&self) -> f64 {
        self.hyper.ridge()
    }

    /// `out = H·v`. `scratch` must have length m.
    pub fn apply_h_into(&self, v: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let n = self.code_dim();
        let d = self.dict.atoms();
        let c = 1.0 / self.alpha;
        let (vs, vo) = v.split_at(n);
        // scratch = D·v_s + v_o
        d.mul_vec_into(vs, scratch);
        scratch.iter_mut().zip(vo).for_each(|(u, &o)| *u += o);
        let ridge = self.ridge();
        let (out_s, out_o) = out.split_at_mut(n);
        for (j, o) in out_s.iter_mut().enumerate() {
            *o = vs[j] - c * (dot(d.col(j), scratch) + ridge * vs[j]);
        }
        for ((o, &vi), &u) in out_o.iter_mut().zip(vo).zip(scratch.iter()) {
            *o = vi - c * u;
        }
    }

    pub fn apply_h(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        let mut scratch = vec![0.0; self.data_dim()];
        self.apply_h_into(v, &mut out, &mut scratch);
        out
    }

    /// `W·x = (1/α)·(Dᵀx; x)`.
    pub fn apply_w_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.code_dim();
        let c = 1.0 / self.alpha;
        let (out_s, out_o) = out.split_at_mut(n);
        self.dict.atoms().tr_mul_vec_into(x, out_s);
        out_s.iter_mut().for_each(|v| *v *= c);
        for (o, &xi) in out_o.iter_mut().zip(x) {
            *o = c * xi;
        }
    }

    pub fn apply_w(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.code_dim() + self.data_dim()];
        self.apply_w_into(x, &mut out);
        out
    }

    /// Dense `H`.
    pub fn h_matrix(&self) -> Matrix {
        let dim = self.code_dim() + self.data_dim();
        let mut h = augmented_matrix(self.dict.atoms(), self.ridge());
        h.scale(-1.0 / self.alpha);
        for i in 0..dim {
            h[(i, i)] += 1.0;
        }
        h
    }

    /// Dense `W`.
    pub fn w_matrix(&self) -> Matrix {
        let (m, n) = (self.data_dim(), self.code_dim());
        let c = 1.0 / self.alpha;
        let mut w = Matrix::zeros(n + m, m);
        let d = self.dict.atoms();
        for i in 0..m {
            for j in 0..n {
                w[(j, i)] = c * d[(i, j)];
            }
            w[(n + i, i)] = c;
        }
        w
    }
}

/// Dense `[[DᵀD + ridge·I, Dᵀ], [D, I]]`.
pub fn augmented_matrix(d: &Matrix, ridge: f64) -> Matrix {
    let (m, n) = (d.rows(), d.cols());
    let mut a = Matrix::zeros(n + m, n + m);
    let g = d.gram();
    for j in 0..n {
        for i in 0..n {
            a[(i, j)] = g[(i, j)];
        }
        a[(j, j)] += ridge;
        for i in 0..m {
            a[(n + i, j)] = d[(i, j)];
            a[(j, n + i)] = d[(i, j)];
        }
    }
    for i in 0..m {
        a[(n + i, n + i)] = 1.0;
    }
    a
}

/// `A·v` for the augmented matrix, computed through `D`.
fn apply_augmented(d: &Matrix, ridge: f64, v: &[f64], out: &mut [f64], scratch: &mut [f64]) {
    let n = d.cols();
    let (vs, vo) = v.split_at(n);
    d.mul_vec_into(vs, scratch);
    scratch.iter_mut().zip(vo).for_each(|(u, &o)| *u += o);
    let (out_s, out_o) = out.split_at_mut(n);
    d.tr_mul_vec_into(scratch, out_s);
    out_s.iter_mut().zip(vs).for_each(|(o, &s)| *o += ridge * s);
    out_o.copy_from_slice(scratch);
}

/// Power iteration state that can be warm-started across slowly changing
/// dictionaries (one estimate per training step).
#[derive(Debug, Clone)]
pub struct StepSizeEstimator {
    v: Vec<f64>,
}

impl StepSizeEstimator {
    /// Starts from a fixed pseudo-random unit vector, so results are reproducible.
    pub fn new(dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITERATION_SEED);
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = norm2(&v);
        v.iter_mut().for_each(|x| *x /= norm);
        StepSizeEstimator { v }
    }

    /// Inflated Rayleigh-quotient estimate of the top eigenvalue of the
    /// augmented matrix. Stops when successive quotients agree to `tol`
    /// (relative) or after `max_iter` iterations.
    pub fn estimate(
        &mut self,
        d: &Matrix,
        variant: Variant,
        lambda_star: f64,
        tol: f64,
        max_iter: usize,
    ) -> f64 {
        let ridge = match variant {
            Variant::Rpca => lambda_star,
            Variant::KSparse => 0.0,
        };
        let dim = d.rows() + d.cols();
        if self.v.len() != dim {
            *self = StepSizeEstimator::new(dim);
        }
        let mut w = vec![0.0; dim];
        let mut scratch = vec![0.0; d.rows()];
        let mut rho_prev = f64::NAN;
        let mut rho = 0.0;
        for _ in 0..max_iter.max(1) {
            apply_augmented(d, ridge, &self.v, &mut w, &mut scratch);
            rho = dot(&self.v, &w);
            let norm = norm2(&w);
            if !(norm > 0.0 && norm.is_finite()) {
                // start vector fell into the null space; fall back to the row-sum bound
                return STEP_SIZE_INFLATION * row_sum_bound(d, ridge);
            }
            self.v.iter_mut().zip(&w).for_each(|(v, &x)| *v = x / norm);
            if (rho - rho_prev).abs() <= tol * rho.abs() {
                break;
            }
            rho_prev = rho;
        }
        STEP_SIZE_INFLATION * rho
    }
}

/// `max_i Σ_j |A_ij|`, an upper bound on the spectral norm of the augmented matrix.
fn row_sum_bound(d: &Matrix, ridge: f64) -> f64 {
    let g = d.gram();
    let mut best: f64 = 0.0;
    for j in 0..d.cols() {
        let row: f64 = norm1(g.col(j)) + ridge + norm1(d.col(j));
        best = best.max(row);
    }
    for i in 0..d.rows() {
        let row: f64 = (0..d.cols()).map(|j| d[(i, j)].abs()).sum::<f64>() + 1.0;
        best = best.max(row);
    }
    best
}

/// Step size `α`: the spectral norm of the augmented matrix (with the `λ*I`
/// block for Rpca, without for KSparse) times [`STEP_SIZE_INFLATION`].
pub fn estimate_step_size(d: &Dictionary, variant: Variant, lambda_star: f64) -> f64 {
    StepSizeEstimator::new(d.data_dim() + d.code_dim()).estimate(
        d.atoms(),
        variant,
        lambda_star,
        POWER_ITERATION_TOL,
        POWER_ITERATION_MAX_ITER,
    )
}

pub fn build_encoder_params(d: &Dictionary, hyper: &Hyper) -> Result<EncoderParams> {
    hyper.validate(d.data_dim(), d.code_dim())?;
    let alpha = estimate_step_size(d, hyper.variant, hyper.lambda_star);
    build_encoder_params_with_alpha(d, hyper, alpha)
}

/// Like [`build_encoder_params`] but with a caller-chosen step size.
pub fn build_encoder_params_with_alpha(
    d: &Dictionary,
    hyper: &Hyper,
    alpha: f64,
) -> Result<EncoderParams> {
    hyper.validate(d.data_dim(), d.code_dim())?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(
            "step size must be positive and finite",
        ));
    }
    let (m, n) = (d.data_dim(), d.code_dim());
    let mut thresholds = vec![0.0; n + m];
    match hyper.variant {
        Variant::Rpca => {
            thresholds[n..]
                .iter_mut()
                .for_each(|t| *t = hyper.lambda / alpha);
        }
        Variant::KSparse => {
            thresholds[..n]
                .iter_mut()
                .for_each(|t| *t = hyper.lambda_star / alpha);
            thresholds[n..]
                .iter_mut()
                .for_each(|t| *t = hyper.lambda / alpha);
        }
    }
    Ok(EncoderParams {
        dict: d.clone(),
        hyper: *hyper,
        alpha,
        thresholds,
    })
}

/// A code `s`, outlier `o` and the low-rank part `l = D·s` of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRepresentation {
    pub s: Vec<f64>,
    pub o: Vec<f64>,
    pub l: Vec<f64>,
}

impl SparseRepresentation {
    pub fn new(d: &Dictionary, s: Vec<f64>, o: Vec<f64>) -> Self {
        let l = d.atoms().mul_vec(&s);
        SparseRepresentation { s, o, l }
    }
}

/// Samples as columns, entries in `[0, 1]`, with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMatrix {
    x: Matrix,
    labels: Option<Vec<usize>>,
}

impl DatasetMatrix {
    pub fn new(x: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        if x.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(
                "dataset entries must lie in [0, 1]",
            ));
        }
        if let Some(l) = &labels {
            if l.len() != x.cols() {
                return Err(Error::DimensionMismatch {
                    what: "label count",
                    expected: x.cols(),
                    found: l.len(),
                });
            }
        }
        Ok(DatasetMatrix { x, labels })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_samples(&self) -> usize {
        self.x.cols()
    }

    pub fn dim(&self) -> usize {
        self.x.rows()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.x.col(i)
    }

    /// The first `count` samples (or all, if fewer).
    pub fn take(&self, count: usize) -> DatasetMatrix {
        let count = count.min(self.num_samples());
        let idx: Vec<usize> = (0..count).collect();
        DatasetMatrix {
            x: self.x.select_columns(&idx),
            labels: self.labels.as_ref().map(|l| l[..count].to_vec()),
        }
    }

    pub fn with_labels(self, labels: Vec<usize>) -> Result<Self> {
        DatasetMatrix::new(self.x, Some(labels))
    }
}

struct Shapes {
    m: usize,
    samples: usize,
}

fn check_shapes(x: &Matrix, d: &Matrix, s: &Matrix, o: &Matrix) -> Result<Shapes> {
    let (m, n, samples) = (d.rows(), d.cols(), x.cols());
    let checks = [
        ("X rows", m, x.rows()),
        ("S rows", n, s.rows()),
        ("S columns", samples, s.cols()),
        ("O rows", m, o.rows()),
        ("O columns", samples, o.cols()),
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
    Ok(Shapes { m, samples })
}

/// `‖X − DS − O‖²_F`.
fn residual_sq(x: &Matrix, d: &Matrix, s: &Matrix, o: &Matrix, shapes: &Shapes) -> f64 {
    let mut recon = vec![0.0; shapes.m];
    let mut total = 0.0;
    for col in 0..shapes.samples {
        d.mul_vec_into(s.col(col), &mut recon);
        total += x
            .col(col)
            .iter()
            .zip(&recon)
            .zip(o.col(col))
            .map(|((xi, ri), oi)| {
                let e = xi - ri - oi;
                e * e
            })
            .sum::<f64>();
    }
    total
}

/// `(1/2)‖X − DS − O‖²_F + (λ*/2)(‖D‖²_F + ‖S‖²_F) + λ‖O‖₁`.
pub fn objective_rpca(
    x: &Matrix,
    d: &Matrix,
    s: &Matrix,
    o: &Matrix,
    lambda_star: f64,
    lambda: f64,
) -> Result<f64> {
    let shapes = check_shapes(x, d, s, o)?;
    let fit = 0.5 * residual_sq(x, d, s, o, &shapes);
    Ok(fit
        + 0.5 * lambda_star * (d.frobenius_sq() + s.frobenius_sq())
        + lambda * norm1(o.as_slice()))
}

/// `‖v − kSparse(v, k)‖₁`: the L1 mass outside the top-k magnitudes.
pub fn ksparse_norm(v: &[f64], k: usize) -> Result<f64> {
    let mask = top_k_mask(v, k)?;
    Ok(v.iter()
        .zip(&mask)
        .filter(|(_, &keep)| !keep)
        .map(|(x, _)| x.abs())
        .sum())
}

/// `(1/2)‖X − DS − O‖²_F + λ*‖S − kSparse(S, k*)‖₁ + λ‖O − kSparse(O, k)‖₁`,
/// with `kSparse` applied to each column separately.
#[allow(clippy::too_many_arguments)]
pub fn objective_ksparse(
    x: &Matrix,
    d: &Matrix,
    s: &Matrix,
    o: &Matrix,
    lambda_star: f64,
    lambda: f64,
    k_star: usize,
    k: usize,
) -> Result<f64> {
    let shapes = check_shapes(x, d, s, o)?;
    let fit = 0.5 * residual_sq(x, d, s, o, &shapes);
    let mut code_pen = 0.0;
    let mut out_pen = 0.0;
    for col in 0..shapes.samples {
        code_pen += ksparse_norm(s.col(col), k_star)?;
        out_pen += ksparse_norm(o.col(col), k)?;
    }
    Ok(fit + lambda_star * code_pen + lambda * out_pen)
}

/// Per-sample variant objective at `(s, o)`. The Rpca `‖D‖²` term is included
/// only when `include_dictionary_term` is set.
pub fn sample_objective(
    hyper: &Hyper,
    d: &Matrix,
    x: &[f64],
    s: &[f64],
    o: &[f64],
    include_dictionary_term: bool,
) -> Result<f64> {
    if x.len() != d.rows() || o.len() != d.rows() || s.len() != d.cols() {
        return Err(Error::DimensionMismatch {
            what: "sample shapes",
            expected: d.rows(),
            found: x.len(),
        });
    }
    let recon = d.mul_vec(s);
    let fit: f64 = x
        .iter()
        .zip(&recon)
        .zip(o)
        .map(|((xi, ri), oi)| {
            let e = xi - ri - oi;
            e * e
        })
        .sum::<f64>()
        * 0.5;
    Ok(match hyper.variant {
        Variant::Rpca => {
            let dict = if include_dictionary_term {
                d.frobenius_sq()
            } else {
                0.0
            };
            fit + 0.5 * hyper.lambda_star * (dict + norm2_sq(s)) + hyper.lambda * norm1(o)
        }
        Variant::KSparse => {
            fit + hyper.lambda_star * ksparse_norm(s, hyper.k_star)?
                + hyper.lambda * ksparse_norm(o, hyper.k)?
        }
    })
}
