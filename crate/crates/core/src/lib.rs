//! Positive semidefinite factorization of nonnegative matrices and tensors by
//! matrix multiplicative updates.
//!
//! Given `X ∈ R₊^{m×n}` and a size `r`, [`mmu::factorize`] searches for r×r PSD
//! matrices `A_i`, `B_j` with `X_ij ≈ tr(A_i B_j)`. Each factor is updated by a
//! congruence with a matrix geometric mean, which keeps it positive definite
//! and never increases the squared loss. Block-diagonal and diagonal (NMF)
//! factorizations follow from structured initialization ([`structured`]), and
//! [`tensor3`] applies the same update to 3-mode tensors.

pub mod error;
pub mod io;
pub mod measurement;
pub mod mmu;
pub mod rng;
pub mod structured;
pub mod symmat;
pub mod tensor3;

pub use error::{Error, Result};
pub use measurement::MeasurementMap;
pub use mmu::{
    factorize, factorize_from, half_sweep_a, half_sweep_b, init_factors, kkt_residual,
    normalized_error, objective, subproblem_update, DataMatrix, FactorPair, InitKind, RunHistory,
    Solver, SolverConfig,
};
pub use structured::{blockwise_factorize, conforms, lee_seung_step, BlockStructure, NmfFactors};
pub use symmat::{geometric_mean, SymMatrix};
pub use tensor3::{tensor_factorize, Tensor3, TensorFactors};
