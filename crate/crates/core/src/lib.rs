//! Desk-scale sequence-modeling lab for recurrent highway networks.
//!
//! The crate implements highway recurrences with coupled (c = 1 - t) and
//! decoupled gate variants, batch normalization on the recurrent-loop
//! inputs, an LSTM baseline, exact backpropagation through time with
//! finite-difference verification, temporal-Jacobian and Gershgorin-disc
//! diagnostics, a deterministic caption-decoder training harness, and
//! corpus caption metrics (BLEU, ROUGE-L, CIDEr).
//!
//! Everything is f64, seeded, and reproducible: the same configuration and
//! seed give bit-identical runs.

pub mod batchnorm;
pub mod cells;
pub mod dataio;
pub mod diagnostics;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod params;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
pub use matrix::Matrix;
