//! Contrastive losses for embeddings on the unit hypersphere.
//!
//! - [`geometry`]: unit-norm batches, Gram matrices, tangent projection and
//!   retraction, simplex and cross-polytope certificates.
//! - [`kernels`]: radial kernels of the squared distance and their
//!   monotonicity/convexity screens.
//! - [`losses`]: InfoNCE, SimCLR, DCL, DHEL, kernel losses and the generic
//!   `(phi, psi)` families, with exact gradients.
//! - [`metrics`]: alignment, uniformity, similarity-distribution distance,
//!   rank and effective rank.
//! - [`sampling`]: synthetic positive-pair distributions and Monte Carlo
//!   estimators of expected and batch-free losses.
//! - [`optimize`]: Riemannian descent over free points and the
//!   optimise-then-certify checks.
//! - [`cli`]: the JSON-configured runner behind the `sphere-cl` binary.

// `!(x > 0.0)` is used on purpose so that NaN lands in the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod optimize;
pub mod sampling;

pub use error::{Error, Result};
