//! Piecewise approximate Bayesian computation for discretely observed
//! Markov models.
//!
//! The posterior is factorised into one term per observed transition. Each
//! factor is sampled by ABC rejection with the identity summary and a
//! small (often zero) tolerance, approximated by a Gaussian or a kernel
//! density estimate, and the factor approximations are recombined with a
//! prior correction into a posterior and a marginal-likelihood estimate.

pub mod abc;
pub mod error;
pub mod gaussian_estimator;
pub mod kde;
pub mod math;
pub mod models;
pub mod oracle;
pub mod par;
pub mod rng;
mod tiled;

pub use error::{Error, Result};
