//! Pyramid vector quantization (PVQ) for weight and activation tensors.
//!
//! Groups of `D` values are split into a direction on the unit sphere and an
//! amplitude. Directions are snapped to integer points of the L1 pyramid of
//! radius `K` and enumerated into integer codes without a stored codebook;
//! amplitudes are optionally quantized through the quantiles of a Beta
//! distribution. A randomized Hadamard rotation spreads outliers before
//! quantization and Hessian-aware error feedback compensates the error of each
//! group in the columns that have not been quantized yet.
//!
//! The numeric kernels are generic over [`Scalar`] (`f32` and `f64`). Code
//! arithmetic uses the exact [`CodeInteger`].

pub mod amplitude;
pub mod bench;
pub mod bignum;
pub mod codec;
pub mod coherence;
pub mod io;
pub mod lattice;
pub mod matrix;
pub mod pipeline;
pub mod scalar;
pub mod selftest;

pub use bignum::CodeInteger;
pub use codec::{PackedCodes, PyramidPoint};
pub use lattice::SizeTable;
pub use scalar::Scalar;

pub use matrix::DenseMatrix;
pub use pipeline::{PvqConfig, QuantizedTensor};

/// Double-precision matrix used for internal computation.
pub type Matrix = DenseMatrix<f64>;
/// Single-precision matrix, the usual storage type of weights.
pub type Matrix32 = DenseMatrix<f32>;
