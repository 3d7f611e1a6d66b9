//! Sparse nonnegative CP tensor factorization for spatio-temporal topic mining.
//!
//! The crate is organized along the pipeline:
//!
//! * [`tensor`]: coordinate-format 3-way tensors, factor matrices, CP models
//!   and the multilinear kernels (MTTKRP, Gram–Hadamard, sparse residual).
//! * [`ingest`]: tweet corpus + gazetteer to a (term × location × time) count tensor.
//! * [`ntf`]: nonnegative CP via cyclic coordinate descent, with selective
//!   (saturating) element updates.
//! * [`nmf`]: the matricized NMF baseline.
//! * [`patterns`]: interpretable component reports and recovery metrics.
//! * [`synth`]: planted models, synthetic corpora and dense reference oracles.

#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod ingest;
pub mod io;
pub mod nmf;
pub mod ntf;
pub mod patterns;
pub mod synth;
pub mod tensor;

mod assignment;
mod cd;

pub use error::{Error, Result};
pub use nmf::{NmfModel, SparseMatrix};
pub use ntf::{Algorithm, SolverConfig, SolverTrace};
pub use patterns::ComponentReport;
pub use tensor::{CpModel, FactorMatrix, Mode, SparseTensor3};
