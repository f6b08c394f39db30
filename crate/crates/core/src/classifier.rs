//! Multinomial logistic regression on frozen codes.
//!
//! Minimizes mean cross-entropy plus `(l2/2)‖W‖²_F` (bias unpenalized).
//! Full-batch mode uses gradient descent and halves the step whenever a step
//! would increase the loss, so the loss sequence is non-increasing.
//! Mini-batch mode shuffles with the configured seed and takes fixed steps.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;
use crate::{Error, Result};

const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    /// Standardize each feature to zero mean and unit variance first.
    pub standardize: bool,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            learning_rate: 1.0,
            epochs: 300,
            l2: 1e-4,
            seed: 0,
            batch_size: None,
            standardize: false,
        }
    }
}

/// Per-feature affine map applied before the linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl Standardizer {
    fn fit(features: &Matrix) -> Self {
        let (n, count) = (features.rows(), features.cols().max(1) as f64);
        let mut mean = vec![0.0; n];
        for col in features.columns() {
            mean.iter_mut().zip(col).for_each(|(m, &v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; n];
        for col in features.columns() {
            for ((s, &v), &m) in var.iter_mut().zip(col).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std = var
            .iter()
            .map(|&v| {
                let sd = libm::sqrt(v / count);
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, inv_std }
    }

    fn apply(&self, features: &Matrix) -> Matrix {
        let mut out = features.clone();
        for j in 0..out.cols() {
            for ((v, &m), &s) in out.col_mut(j).iter_mut().zip(&self.mean).zip(&self.inv_std) {
                *v = (*v - m) * s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    /// C × n.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub classes: usize,
    pub standardizer: Option<Standardizer>,
}

/// Fitted model plus the training loss after every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub model: LogRegModel,
    pub losses: Vec<f64>,
}

impl LogRegModel {
    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        let mut z = self.weights.mul_vec(features);
        z.iter_mut().zip(&self.bias).for_each(|(z, b)| *z += b);
        z
    }

    /// Class per column; ties go to the lowest class index.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        if features.rows() != self.weights.cols() {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: self.weights.cols(),
                found: features.rows(),
            });
        }
        let prepared;
        let features = match &self.standardizer {
            Some(s) => {
                prepared = s.apply(features);
                &prepared
            }
            None => features,
        };
        Ok(features
            .columns()
            .map(|x| argmax(&self.logits(x)))
            .collect())
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// In-place softmax; returns `log Σ exp(z)`.
fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
    max + libm::log(sum)
}

/// Mean cross-entropy + penalty over `columns`; adds the gradient to `gw`/`gb` if given.
fn loss_and_grad(
    model: &LogRegModel,
    features: &Matrix,
    labels: &[usize],
    columns: &[usize],
    l2: f64,
    mut grad: Option<(&mut Matrix, &mut Vec<f64>)>,
) -> f64 {
    let count = columns.len() as f64;
    let mut total = 0.0;
    if let Some((gw, gb)) = grad.as_mut() {
        gw.scale(0.0);
        gb.iter_mut().for_each(|v| *v = 0.0);
    }
    for &i in columns {
        let x = features.col(i);
        let mut p = model.logits(x);
        let y = labels[i];
        let log_norm = {
            let zy = p[y];
            let lse = softmax_in_place(&mut p);
            lse - zy
        };
        total += log_norm;
        if let Some((gw, gb)) = grad.as_mut() {
            p[y] -= 1.0;
            gw.add_outer(1.0 / count, &p, x);
            gb.iter_mut().zip(&p).for_each(|(g, &v)| *g += v / count);
        }
    }
    if let Some((gw, _)) = grad.as_mut() {
        gw.add_scaled(l2, &model.weights);
    }
    total / count + 0.5 * l2 * model.weights.frobenius_sq()
}

pub fn fit(codes: &Matrix, labels: &[usize], config: &LogRegConfig) -> Result<LogRegModel> {
    Ok(fit_with_history(codes, labels, config)?.model)
}

pub fn fit_with_history(
    codes: &Matrix,
    labels: &[usize],
    config: &LogRegConfig,
) -> Result<FitOutcome> {
    let count = codes.cols();
    if count == 0 || codes.rows() == 0 {
        return Err(Error::EmptyInput("classifier training set"));
    }
    if labels.len() != count {
        return Err(Error::DimensionMismatch {
            what: "label count",
            expected: count,
            found: labels.len(),
        });
    }
    if !codes.is_finite() {
        return Err(Error::NonFinite { what: "codes" });
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidParameter("learning rate must be positive"));
    }
    if !(config.l2 >= 0.0) {
        return Err(Error::InvalidParameter("l2 must be nonnegative"));
    }
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(Error::SingleClass);
    }
    if count < classes {
        return Err(Error::InvalidParameter(
            "need at least as many samples as classes",
        ));
    }

    let standardizer = config.standardize.then(|| Standardizer::fit(codes));
    let prepared;
    let features = match &standardizer {
        Some(s) => {
            prepared = s.apply(codes);
            &prepared
        }
        None => codes,
    };

    let n = features.rows();
    let mut model = LogRegModel {
        weights: Matrix::zeros(classes, n),
        bias: vec![0.0; classes],
        classes,
        standardizer: None,
    };
    let mut gw = Matrix::zeros(classes, n);
    let mut gb = vec![0.0; classes];
    let mut losses = Vec::with_capacity(config.epochs);
    let mut columns: Vec<usize> = (0..count).collect();

    match config.batch_size {
        None => {
            let mut lr = config.learning_rate;
            let mut current = loss_and_grad(
                &model,
                features,
                labels,
                &columns,
                config.l2,
                Some((&mut gw, &mut gb)),
            );
            for _ in 0..config.epochs {
                let mut accepted = false;
                for _ in 0..MAX_HALVINGS {
                    let mut trial = model.clone();
                    trial.weights.add_scaled(-lr, &gw);
                    trial
                        .bias
                        .iter_mut()
                        .zip(&gb)
                        .for_each(|(b, &g)| *b -= lr * g);
                    let next = loss_and_grad(&trial, features, labels, &columns, config.l2, None);
                    if next <= current {
                        model = trial;
                        current = next;
                        accepted = true;
                        break;
                    }
                    lr *= 0.5;
                }
                losses.push(current);
                if !accepted {
                    // no descent direction left at this precision
                    break;
                }
                loss_and_grad(
                    &model,
                    features,
                    labels,
                    &columns,
                    config.l2,
                    Some((&mut gw, &mut gb)),
                );
            }
        }
        Some(batch) => {
            if batch == 0 {
                return Err(Error::InvalidParameter("batch size must be at least 1"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let lr = config.learning_rate;
            for _ in 0..config.epochs {
                columns.shuffle(&mut rng);
                for chunk in columns.chunks(batch) {
                    loss_and_grad(
                        &model,
                        features,
                        labels,
                        chunk,
                        config.l2,
                        Some((&mut gw, &mut gb)),
                    );
                    model.weights.add_scaled(-lr, &gw);
                    model
                        .bias
                        .iter_mut()
                        .zip(&gb)
                        .for_each(|(b, &g)| *b -= lr * g);
                }
                let all: Vec<usize> = (0..count).collect();
                losses.push(loss_and_grad(
                    &model, features, labels, &all, config.l2, None,
                ));
            }
        }
    }
    if !model.weights.is_finite() {
        return Err(Error::NonFinite {
            what: "classifier weights",
        });
    }
    model.standardizer = standardizer;
    Ok(FitOutcome { model, losses })
}

/// Fraction of samples whose arg-max class differs from the label.
pub fn error_rate(model: &LogRegModel, codes: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != codes.cols() {
        return Err(Error::DimensionMismatch {
            what: "label count",
            expected: codes.cols(),
            found: labels.len(),
        });
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let predicted = model.predict(codes)?;
    let wrong = predicted.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(wrong as f64 / labels.len() as f64)
}
