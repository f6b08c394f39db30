//! File formats and command-line driver around `kspc-core`: MNIST IDX
//! loading, the binary model container, codes output, PGM dictionary
//! export and plain-text run manifests.

pub mod codes;
pub mod commands;
pub mod error;
pub mod idx;
pub mod manifest;
pub mod model_file;
pub mod pgm;

pub use error::{Error, Result};
