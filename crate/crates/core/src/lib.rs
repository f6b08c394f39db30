//! Learned proximal-descent sparse coding.
//!
//! A dictionary `D` (m × n) maps codes to data. Each sample `x` is split as
//! `x ≈ D·s + o` into a code `s` and an outlier vector `o` by running a fixed
//! number of proximal-descent iterations ("layers") whose weights `H`, `W`
//! and thresholds `t` are all derived from `D`. Two regularizers are
//! supported:
//!
//! * [`Variant::Rpca`]: `(λ*/2)(‖D‖² + ‖s‖²) + λ‖o‖₁`, the classic robust PCA
//!   objective. The code block is never thresholded.
//! * [`Variant::KSparse`]: `λ*‖s − kSparse(s, k*)‖₁ + λ‖o − kSparse(o, k)‖₁`.
//!   The `k` largest-magnitude entries escape the L1 penalty, which turns the
//!   shrinkage into the soft k-sparse operator [`shrinkage::soft_k_sparse`].
//!
//! The dictionary is trained by backpropagating the objective through the
//! unrolled iterations ([`training`]), and learned codes are scored with a
//! multinomial logistic regression ([`classifier`]).
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod classifier;
pub mod encoder;
mod error;
pub mod linalg;
pub mod model;
pub mod shrinkage;
pub mod training;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::{
    build_encoder_params, build_encoder_params_with_alpha, estimate_step_size, objective_ksparse,
    objective_rpca, support_concentration, DatasetMatrix, Dictionary, EncoderParams, Hyper,
    SparseRepresentation, Variant,
};
