//! Quantized tree ensembles compiled to table-lookup tensor programs.
//!
//! The pipeline is:
//!
//! 1. [`quantizer`]: per-feature affine quantization of the inputs;
//! 2. [`trainer`]: CART / random forest / boosting on the integer features,
//!    exported as a [`tree_ir::TreeEnsemble`] with quantized leaves;
//! 3. [`compiler`]: lowering to the `A, B, C, D, L_q` tensors and the
//!    comparison / equality look-up tables;
//! 4. [`engine`]: evaluation of that program, exactly or with simulated
//!    programmable-bootstrapping failures;
//! 5. [`analysis`]: interval bit-width analysis of the encrypted segments.

pub mod analysis;
pub mod compiler;
pub mod engine;
pub mod error;
pub mod quantizer;
pub mod rng;
pub mod synth;
pub mod trainer;
pub mod tree_ir;

pub use error::{Error, Result};
