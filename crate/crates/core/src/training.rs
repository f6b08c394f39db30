//! Dictionary learning by backpropagation through the unrolled encoder.
//!
//! Only `D` is trained. `H`, `W` and `t` are recomputed from `D` at every
//! step, so the gradient follows `D` through all of its appearances: the
//! input map `W·x`, every `H` product, the reconstruction `D·s` and, for
//! Rpca, the `(λ*/2)‖D‖²` penalty. The step size `α` is re-estimated every
//! step but treated as a constant when differentiating.
//!
//! Because `b_j = W·x + H·z_j` along the recurrence, the backward pass is the
//! usual one for a tied-weight recurrent network. Shrinkage is piecewise
//! linear: within one forward pass the top-k supports and the sign/zero
//! pattern are frozen and each coordinate has slope 0 or 1.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{encode_unrolled, DiagnosticsAccumulator, LayerTrace, ProximalDescent};
use crate::linalg::{axpy, dot, Matrix};
use crate::model::{
    build_encoder_params, build_encoder_params_with_alpha, sample_objective, DatasetMatrix,
    Dictionary, EncoderParams, Hyper, SparseRepresentation, StepSizeEstimator, Variant,
    POWER_ITERATION_MAX_ITER, POWER_ITERATION_TOL,
};
use crate::shrinkage::top_k_mask_into;
use crate::{Error, Result};

/// Power iterations per training step once warm-started from the previous step.
pub const WARM_POWER_ITERATIONS: usize = 20;
/// Training aborts once an epoch objective exceeds this multiple of the initial one.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DictInit {
    #[default]
    RandomGaussianNormalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of atoms n of a freshly initialized dictionary.
    pub code_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hyper: Hyper,
    pub dict_init: DictInit,
    pub renormalize_atoms: bool,
}

impl TrainConfig {
    /// Defaults: 10 epochs, batches of 50, learning rate 0.05, seed 0.
    /// Atoms are renormalized for KSparse only, whose objective has no `‖D‖²` term.
    pub fn new(hyper: Hyper, code_dim: usize) -> Self {
        TrainConfig {
            code_dim,
            epochs: 10,
            batch_size: 50,
            learning_rate: 0.05,
            seed: 0,
            hyper,
            dict_init: DictInit::RandomGaussianNormalized,
            renormalize_atoms: hyper.variant == Variant::KSparse,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(
                "learning rate must be finite and nonnegative",
            ));
        }
        Ok(())
    }
}

/// Whole-dataset metrics at the end of an epoch (epoch 0 is the initial dictionary).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample objective.
    pub objective: f64,
    pub recon_error: f64,
    pub code_density: f64,
    pub outlier_energy_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial: EpochRecord,
    pub epochs: Vec<EpochRecord>,
    /// Filled in by callers that have a clock.
    pub wall_clock_seconds: Option<f64>,
}

impl TrainReport {
    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().unwrap_or(&self.initial)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub renormalize_atoms: bool,
    pub final_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub dictionary: Dictionary,
    pub hyper: Hyper,
    pub meta: TrainingMeta,
}

impl TrainedModel {
    pub fn encoder_params(&self) -> Result<EncoderParams> {
        build_encoder_params(&self.dictionary, &self.hyper)
    }
}

/// Single-sample objective at the encoder output, including the Rpca
/// `(λ*/2)‖D‖²` term. Batch losses are means of this.
pub fn loss(x: &[f64], rep: &SparseRepresentation, d: &Dictionary, hyper: &Hyper) -> Result<f64> {
    sample_objective(hyper, d.atoms(), x, &rep.s, &rep.o, true)
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Buffers reused across the samples of a batch.
struct Workspace {
    residual: Vec<f64>,
    gz: Vec<f64>,
    gb: Vec<f64>,
    gb_code_sum: Vec<f64>,
    q: Vec<f64>,
    p: Vec<f64>,
    protected_code: Vec<bool>,
    protected_out: Vec<bool>,
    scratch_idx: Vec<usize>,
}

impl Workspace {
    fn new(m: usize, n: usize) -> Self {
        Workspace {
            residual: vec![0.0; m],
            gz: vec![0.0; n + m],
            gb: vec![0.0; n + m],
            gb_code_sum: vec![0.0; n],
            q: vec![0.0; m],
            p: vec![0.0; m],
            protected_code: vec![false; n],
            protected_out: vec![false; m],
            scratch_idx: Vec::new(),
        }
    }
}

/// Adds `∂loss/∂D` for one sample (without the Rpca `λ*D` term) to `grad`
/// and returns the sample loss (without the `‖D‖²` term).
fn accumulate_sample_gradient(
    x: &[f64],
    params: &EncoderParams,
    rep: &SparseRepresentation,
    trace: &LayerTrace,
    grad: &mut Matrix,
    ws: &mut Workspace,
) -> Result<f64> {
    let d = params.dictionary().atoms();
    let (m, n) = (d.rows(), d.cols());
    let c = 1.0 / params.alpha();
    let ridge = params.ridge();
    let hyper = params.hyper();

    // r = D·s + o − x
    for (((r, l), o), xi) in ws.residual.iter_mut().zip(&rep.l).zip(&rep.o).zip(x) {
        *r = l + o - xi;
    }
    let (gz_s, gz_o) = ws.gz.split_at_mut(n);
    d.tr_mul_vec_into(&ws.residual, gz_s);
    gz_o.copy_from_slice(&ws.residual);
    let fit = 0.5 * dot(&ws.residual, &ws.residual);
    let penalty = match hyper.variant {
        Variant::Rpca => {
            axpy(hyper.lambda_star, &rep.s, gz_s);
            for (g, &o) in gz_o.iter_mut().zip(&rep.o) {
                *g += hyper.lambda * sign(o);
            }
            0.5 * hyper.lambda_star * dot(&rep.s, &rep.s)
                + hyper.lambda * rep.o.iter().map(|v| v.abs()).sum::<f64>()
        }
        Variant::KSparse => {
            top_k_mask_into(
                &rep.s,
                hyper.k_star,
                &mut ws.protected_code,
                &mut ws.scratch_idx,
            );
            top_k_mask_into(&rep.o, hyper.k, &mut ws.protected_out, &mut ws.scratch_idx);
            let mut pen = 0.0;
            for (j, g) in gz_s.iter_mut().enumerate() {
                if !ws.protected_code[j] {
                    *g += hyper.lambda_star * sign(rep.s[j]);
                    pen += hyper.lambda_star * rep.s[j].abs();
                }
            }
            for (i, g) in gz_o.iter_mut().enumerate() {
                if !ws.protected_out[i] {
                    *g += hyper.lambda * sign(rep.o[i]);
                    pen += hyper.lambda * rep.o[i].abs();
                }
            }
            pen
        }
    };
    if ws.gz.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "loss gradient",
        });
    }

    // reconstruction term: r·sᵀ
    grad.add_outer(1.0, &ws.residual, &rep.s);

    ws.gb_code_sum.iter_mut().for_each(|v| *v = 0.0);
    for layer in (0..trace.depth()).rev() {
        for ((gb, &gz), &pass) in ws.gb.iter_mut().zip(&ws.gz).zip(trace.pass(layer)) {
            *gb = if pass { gz } else { 0.0 };
        }
        let (gb_s, gb_o) = ws.gb.split_at(n);
        axpy(1.0, gb_s, &mut ws.gb_code_sum);
        if layer == 0 {
            // this layer's H multiplied z⁰ = 0
            break;
        }
        let z_in = trace.output(layer - 1);
        let (zs, zo) = z_in.split_at(n);

        // q = D·gb_s + gb_o,  p = D·z_s + z_o
        d.mul_vec_into(gb_s, &mut ws.q);
        axpy(1.0, gb_o, &mut ws.q);
        d.mul_vec_into(zs, &mut ws.p);
        axpy(1.0, zo, &mut ws.p);
        grad.add_outer(-c, &ws.q, zs);
        grad.add_outer(-c, &ws.p, gb_s);

        // gz = H·gb (H is symmetric)
        let (gz_s, gz_o) = ws.gz.split_at_mut(n);
        for j in 0..n {
            gz_s[j] = gb_s[j] - c * (dot(d.col(j), &ws.q) + ridge * gb_s[j]);
        }
        for i in 0..m {
            gz_o[i] = gb_o[i] - c * ws.q[i];
        }
    }
    // input map: W·x = c·(Dᵀx; x)
    grad.add_outer(c, x, &ws.gb_code_sum);
    Ok(fit + penalty)
}

/// Mean-over-batch gradient of the loss with respect to `D`, and the mean loss.
///
/// `batch` holds one sample per column. `α` inside `params` is held fixed.
pub fn grad_dictionary(batch: &Matrix, params: &EncoderParams) -> Result<(Matrix, f64)> {
    let d = params.dictionary().atoms();
    let (m, n) = (d.rows(), d.cols());
    if batch.rows() != m {
        return Err(Error::DimensionMismatch {
            what: "batch rows",
            expected: m,
            found: batch.rows(),
        });
    }
    if batch.cols() == 0 {
        return Err(Error::EmptyInput("gradient batch"));
    }
    let mut grad = Matrix::zeros(m, n);
    let mut ws = Workspace::new(m, n);
    let mut total = 0.0;
    // fixed sample order keeps the reduction bitwise reproducible
    for x in batch.columns() {
        let (rep, trace) = encode_unrolled(x, params)?;
        total += accumulate_sample_gradient(x, params, &rep, &trace, &mut grad, &mut ws)?;
    }
    let count = batch.cols() as f64;
    grad.scale(1.0 / count);
    let mut mean_loss = total / count;
    if params.variant() == Variant::Rpca {
        let lambda_star = params.lambda_star();
        grad.add_scaled(lambda_star, d);
        mean_loss += 0.5 * lambda_star * d.frobenius_sq();
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite {
            what: "dictionary gradient",
        });
    }
    Ok((grad, mean_loss))
}

/// Mean batch loss of the unrolled encoder for dictionary `d` at a fixed `α`.
/// This is the function [`grad_dictionary`] differentiates.
pub fn batch_loss_fixed_alpha(
    batch: &Matrix,
    d: &Dictionary,
    hyper: &Hyper,
    alpha: f64,
) -> Result<f64> {
    let params = build_encoder_params_with_alpha(d, hyper, alpha)?;
    let mut total = 0.0;
    for x in batch.columns() {
        let mut pd = ProximalDescent::new(&params, x)?;
        for _ in 0..params.depth() {
            pd.step()?;
        }
        total += loss(x, &pd.representation(), d, hyper)?;
    }
    Ok(total / batch.cols() as f64)
}

/// Encodes the whole dataset and summarizes objective and diagnostics.
pub fn evaluate(data: &Matrix, params: &EncoderParams, epoch: usize) -> Result<EpochRecord> {
    let d = params.dictionary();
    let hyper = params.hyper();
    let mut acc = DiagnosticsAccumulator::default();
    let mut total = 0.0;
    for x in data.columns() {
        let mut pd = ProximalDescent::new(params, x)?;
        for _ in 0..params.depth() {
            pd.step()?;
        }
        let rep = pd.representation();
        total += sample_objective(hyper, d.atoms(), x, &rep.s, &rep.o, false)?;
        acc.add_sample(x, &rep.s, &rep.o, &rep.l);
    }
    let count = data.cols().max(1) as f64;
    let mut objective = total / count;
    if hyper.variant == Variant::Rpca {
        objective += 0.5 * hyper.lambda_star * d.atoms().frobenius_sq();
    }
    let diag = acc.finish();
    Ok(EpochRecord {
        epoch,
        objective,
        recon_error: diag.recon_error,
        code_density: diag.code_density,
        outlier_energy_ratio: diag.outlier_energy_ratio,
    })
}

/// Trains from a seeded random dictionary.
pub fn train(data: &DatasetMatrix, config: &TrainConfig) -> Result<(TrainedModel, TrainReport)> {
    train_from(data, config, None, |_| {})
}

/// Trains from `init` (or a seeded random dictionary), calling `on_epoch`
/// with the initial record and after every epoch.
pub fn train_from<F: FnMut(&EpochRecord)>(
    data: &DatasetMatrix,
    config: &TrainConfig,
    init: Option<Dictionary>,
    mut on_epoch: F,
) -> Result<(TrainedModel, TrainReport)> {
    config.validate()?;
    let samples = data.num_samples();
    if samples == 0 {
        return Err(Error::EmptyInput("training dataset"));
    }
    let hyper = config.hyper;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dict = match init {
        Some(d) => {
            if d.data_dim() != data.dim() {
                return Err(Error::DimensionMismatch {
                    what: "initial dictionary rows",
                    expected: data.dim(),
                    found: d.data_dim(),
                });
            }
            d
        }
        None => match config.dict_init {
            DictInit::RandomGaussianNormalized => {
                Dictionary::random_unit_columns(data.dim(), hyper_code_dim(config)?, &mut rng)?
            }
        },
    };
    hyper.validate(dict.data_dim(), dict.code_dim())?;

    // epoch evaluations use the same fresh α as inference, so reported
    // metrics match what `encode` later reproduces from the saved model
    let initial = evaluate(data.x(), &build_encoder_params(&dict, &hyper)?, 0)?;
    let mut estimator = StepSizeEstimator::new(dict.data_dim() + dict.code_dim());
    estimator.estimate(
        dict.atoms(),
        hyper.variant,
        hyper.lambda_star,
        POWER_ITERATION_TOL,
        POWER_ITERATION_MAX_ITER,
    );
    on_epoch(&initial);

    let mut order: Vec<usize> = (0..samples).collect();
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let alpha = estimator.estimate(
                dict.atoms(),
                hyper.variant,
                hyper.lambda_star,
                POWER_ITERATION_TOL,
                WARM_POWER_ITERATIONS,
            );
            let params = build_encoder_params_with_alpha(&dict, &hyper, alpha)?;
            let batch = data.x().select_columns(chunk);
            let (grad, _) = grad_dictionary(&batch, &params)?;
            drop(params);
            if config.learning_rate != 0.0 {
                dict.atoms_mut().add_scaled(-config.learning_rate, &grad);
                if config.renormalize_atoms {
                    dict.normalize_atoms()?;
                } else {
                    dict.check_atoms()?;
                }
            }
        }
        let record = evaluate(data.x(), &build_encoder_params(&dict, &hyper)?, epoch)?;
        on_epoch(&record);
        if !record.objective.is_finite() {
            return Err(Error::NonFinite {
                what: "epoch objective",
            });
        }
        if record.objective > DIVERGENCE_FACTOR * initial.objective {
            return Err(Error::Diverged {
                epoch,
                objective: record.objective,
                initial: initial.objective,
            });
        }
        records.push(record);
    }

    let final_objective = records.last().map_or(initial.objective, |r| r.objective);
    let model = TrainedModel {
        dictionary: dict,
        hyper,
        meta: TrainingMeta {
            seed: config.seed,
            epochs: config.epochs,
            batch_size: config.batch_size,
            learning_rate: config.learning_rate,
            renormalize_atoms: config.renormalize_atoms,
            final_objective,
        },
    };
    Ok((
        model,
        TrainReport {
            initial,
            epochs: records,
            wall_clock_seconds: None,
        },
    ))
}

fn hyper_code_dim(config: &TrainConfig) -> Result<usize> {
    match config.code_dim {
        0 => Err(Error::ZeroDimension {
            what: "code dimension",
        }),
        n => Ok(n),
    }
}
