//! Positional encodings through the geometry of positional token statistics.
//!
//! Each sequence position `i` of a corpus induces a marginal token
//! distribution `μ_i`. The Hellinger distance between these marginals is a
//! metric on positions, and classical multidimensional scaling of that metric
//! yields the encoding that reproduces it with the least stress. The crate
//! provides:
//!
//! - [`corpus`]: corpus ingestion, a seeded three-regime synthetic generator,
//!   and positional marginal estimation.
//! - [`geometry`]: Hellinger distances, double centering, a cyclic Jacobi
//!   eigensolver and spectral summaries.
//! - [`encodings`]: MDS, low-rank MDS, sinusoidal, RoPE-derived,
//!   ALiBi-derived and random encodings.
//! - [`diagnostics`]: stress, monotonicity violations, minimum separation,
//!   Hellinger correlation, projected stress and the rank trade-off table.
//! - [`attention`]: a single-head attention layer for permutation-equivariance
//!   and mean-embedding Lipschitz checks.
//! - [`dynamics`]: the linearised (NTK) gradient flow on positions, its fixed
//!   point and the quantitative monotonicity bound.
//!
//! With the default `parallel` feature the data-parallel loops run on rayon;
//! without it they run sequentially. Both paths produce identical results.

pub mod attention;
pub mod cli;
pub mod corpus;
pub mod diagnostics;
pub mod dynamics;
pub mod encodings;
mod error;
pub mod geometry;
pub mod matrix_io;
mod par;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
