#![allow(dead_code)]

use kspc_core::{Dictionary, Hyper, Matrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian_dict(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Dictionary {
    let scale = 1.0 / (m as f64).sqrt();
    let data = (0..m * n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Dictionary::new(Matrix::from_col_major(m, n, data).unwrap()).unwrap()
}

pub fn unit_sample(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.random::<f64>()).collect()
}

/// Rpca or KSparse with random weights and supports for an `m × n` dictionary.
pub fn random_hyper(rng: &mut ChaCha8Rng, ksparse: bool, m: usize, n: usize) -> Hyper {
    let lambda_star = rng.random_range(0.01..1.0);
    let lambda = rng.random_range(0.01..1.0);
    if ksparse {
        Hyper::ksparse(
            lambda_star,
            lambda,
            rng.random_range(0..=n),
            rng.random_range(0..=m),
        )
    } else {
        Hyper::rpca(lambda_star, lambda)
    }
}

pub fn column(v: &[f64]) -> Matrix {
    Matrix::from_col_major(v.len(), 1, v.to_vec()).unwrap()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
