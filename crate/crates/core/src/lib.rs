//! Numerical kernels for matrix-weighted, variable-exponent Besov analysis on
//! finite dyadic grids.
//!
//! Everything lives on a truncated box (either `[0,1)^n` or
//! `[-2^J_box, 2^J_box)^n`) carved into dyadic cells, so every integral is an
//! exact finite sum and every "supremum over cubes" is a finite maximum. The
//! crate provides, bottom up:
//!
//! - [`exponents`]: variable exponents `p(·)`, `q(·)`, `s(·)` with cached
//!   bounds and estimated log-Hölder constants;
//! - [`grid`]: the dyadic cube lattice, piecewise-constant grid functions,
//!   and coefficient sequences indexed by cubes;
//! - [`varleb`]: the variable Lebesgue modular/norm and the mixed
//!   `l^{q(·)}(L^{p(·)})` norm, both by bracketed bisection;
//! - [`weights`]: matrix weights, reducing operators (exact and
//!   John-ellipsoid), the `A_{p(·),∞}`-type characteristic, dimension
//!   estimation, and strong doubling;
//! - [`seqspaces`]: Besov sequence norms `b`, `b(W)`, `b(A)` and the maximal
//!   sequence `t*`;
//! - [`almostdiag`]: almost-diagonal kernels, truncated application with a
//!   certified dropped-mass bound, and the parameter-condition checkers;
//! - [`molecules`]: molecule condition checks, atom construction, pairings;
//! - [`lpgrid`]: periodic Littlewood–Paley analysis (admissible multiplier
//!   pairs, the coefficient transform and its inverse, function-side norms);
//! - [`wavelets`]: orthonormal filter banks, cascade point values, tensor
//!   DWT, and wavelet-side Besov norms;
//! - [`trace`]: coefficient-level trace/extension across the hyperplane
//!   `x_n = 0` and weight-compatibility diagnostics.
//!
//! All operations are deterministic: sampled computations take explicit
//! seeds, and parallel reductions are ordered so reruns are bit-stable.

pub mod almostdiag;
pub mod error;
pub mod exponents;
pub mod grid;
pub mod linalg;
pub mod lpgrid;
pub mod molecules;
pub(crate) mod sampling;
pub mod seqspaces;
pub mod tolerances;
pub mod varleb;
pub mod wavelets;
pub mod weights;

pub use almostdiag::{
    AdKernel, AdKernelTable, AdParams, ConditionReport, CzoParams, NormWeighting, SpaceIndexData,
};
pub use error::{Error, Result};
pub use exponents::VariableExponent;
pub use grid::{CoefficientSequence, Domain, DyadicCube, Grid, GridFunction};
pub use linalg::Mat;
pub use lpgrid::{AdmissiblePair, BumpProfile, EnvelopeMode};
pub use molecules::MoleculeParams;
pub use seqspaces::BesovSeqParams;
pub use varleb::NormResult;
pub use wavelets::{CascadeValues, WaveletCoeffSet, WaveletFilter};
pub use weights::{MatrixWeight, ReducingFamily, ReducingMethod};
