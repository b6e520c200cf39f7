//! Black-box auditing of Rényi differential privacy claims.
//!
//! Given only paired output samples of a randomized mechanism on two
//! adjacent databases, this crate estimates the Rényi divergence of the
//! output distributions with a softmax-floored plug-in estimator and turns
//! it into a statistical lower bound on the mechanism's privacy parameter
//! that holds with a prescribed confidence.
//!
//! The crate is organized around five pieces:
//!
//! - [`mechanisms`]: the black-box side — databases, adjacency and seeded
//!   sampling for seven mechanism families (additive Laplace/Gaussian
//!   noise, their Poisson-subsampled variants, binary randomized response,
//!   its shuffled form, and noisy gradient descent).
//! - [`density`]: relative frequency tables for discrete outputs and
//!   grid-evaluated kernel density estimates for continuous ones.
//! - [`divergence`]: the estimator core — softmax flooring, plug-in Rényi
//!   divergence, its variance estimate and the confidence lower bound.
//! - [`oracles`]: closed-form divergences of the audited mechanisms, used
//!   to validate the estimated bounds and measure coverage.
//! - [`harness`]: replication loops, coverage statistics, parameter sweeps
//!   and CSV/JSON emission.

pub mod cli;
pub mod density;
pub mod divergence;
pub mod error;
pub mod harness;
pub mod mechanisms;
pub mod oracles;

pub use error::{AuditError, Result};
